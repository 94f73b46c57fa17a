//! Exact label-preserving augmentation: the dihedral group of the square
//! (rotations by multiples of 90 degrees plus flips), applied identically
//! to the image and all four label planes.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geom::LabelStack;

/// One of the 8 square symmetries: `rot` quarter-turns counter-clockwise,
/// then an optional horizontal flip.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct D4 {
    pub rot: u8,
    pub flip: bool,
}

impl D4 {
    pub const IDENTITY: D4 = D4 { rot: 0, flip: false };

    pub fn draw(seed: u64) -> D4 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        D4 { rot: rng.gen_range(0..4), flip: rng.gen_bool(0.5) }
    }
}

pub fn apply_d4_to_plane<T: Copy + Default>(plane: &Array2<T>, op: D4) -> Array2<T> {
    let mut cur = plane.clone();
    for _ in 0..op.rot {
        cur = rot90(&cur);
    }
    if op.flip {
        cur = fliplr(&cur);
    }
    cur
}

pub fn apply_d4_to_stack(image: &Array3<f32>, op: D4) -> Array3<f32> {
    let planes: Vec<Array2<f32>> = image
        .outer_iter()
        .map(|p| apply_d4_to_plane(&p.to_owned(), op))
        .collect();
    let (h, w) = planes[0].dim();
    let mut out = Array3::<f32>::zeros((planes.len(), h, w));
    for (i, p) in planes.into_iter().enumerate() {
        out.index_axis_mut(ndarray::Axis(0), i).assign(&p);
    }
    out
}

pub fn apply_d4_to_labels(labels: &LabelStack, op: D4) -> LabelStack {
    LabelStack {
        extent: apply_d4_to_plane(&labels.extent, op),
        boundary: apply_d4_to_plane(&labels.boundary, op),
        distance: apply_d4_to_plane(&labels.distance, op),
        mask: apply_d4_to_plane(&labels.mask, op),
    }
}

/// Draw a random symmetry from the seed and apply it to image and labels.
pub fn augment_sample(image: &Array3<f32>, labels: &LabelStack, seed: u64) -> (Array3<f32>, LabelStack) {
    let op = D4::draw(seed);
    (apply_d4_to_stack(image, op), apply_d4_to_labels(labels, op))
}

fn rot90<T: Copy + Default>(a: &Array2<T>) -> Array2<T> {
    let (h, w) = a.dim();
    let mut out = Array2::<T>::default((w, h));
    for r in 0..h {
        for c in 0..w {
            out[(w - 1 - c, r)] = a[(r, c)];
        }
    }
    out
}

fn fliplr<T: Copy + Default>(a: &Array2<T>) -> Array2<T> {
    let (h, w) = a.dim();
    let mut out = Array2::<T>::default((h, w));
    for r in 0..h {
        for c in 0..w {
            out[(r, w - 1 - c)] = a[(r, c)];
        }
    }
    out
}
