//! Class-wise boundary erosion and small-component removal on label
//! rasters.

use std::collections::VecDeque;

use ndarray::Array2;

use crate::UNKNOWN;

const NEIGHBORS_4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];

/// One-pixel erosion of every class with a full 3×3 structuring element.
///
/// A pixel becomes unknown when any of its 8 neighbours carries a different
/// code (unknown included) or lies outside the raster.
pub fn erode_labels(codes: &Array2<u8>) -> Array2<u8> {
    let (h, w) = codes.dim();
    Array2::from_shape_fn((h, w), |(i, j)| {
        let c = codes[(i, j)];
        if c == UNKNOWN || i == 0 || j == 0 || i + 1 == h || j + 1 == w {
            return UNKNOWN;
        }
        let uniform = (i - 1..=i + 1).all(|y| (j - 1..=j + 1).all(|x| codes[(y, x)] == c));
        if uniform {
            c
        } else {
            UNKNOWN
        }
    })
}

/// Labels maximal 4-connected same-code regions of known pixels.
///
/// Returns a component id per pixel (`usize::MAX` for unknown pixels) and
/// the size of each component.
pub fn label_components(codes: &Array2<u8>) -> (Array2<usize>, Vec<usize>) {
    let (h, w) = codes.dim();
    let mut ids = Array2::from_elem((h, w), usize::MAX);
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in ndarray::indices((h, w)) {
        let code = codes[start];
        if code == UNKNOWN || ids[start] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        ids[start] = id;
        queue.push_back(start);
        while let Some((i, j)) = queue.pop_front() {
            size += 1;
            for (di, dj) in NEIGHBORS_4 {
                let (y, x) = (i as isize + di, j as isize + dj);
                if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
                    continue;
                }
                let p = (y as usize, x as usize);
                if codes[p] == code && ids[p] == usize::MAX {
                    ids[p] = id;
                    queue.push_back(p);
                }
            }
        }
        sizes.push(size);
    }
    (ids, sizes)
}

/// Sets every 4-connected component of size `<= max_size` to unknown.
pub fn remove_small_components(codes: &Array2<u8>, max_size: usize) -> Array2<u8> {
    let (ids, sizes) = label_components(codes);
    let mut out = codes.clone();
    ndarray::Zip::from(&mut out).and(&ids).for_each(|c, &id| {
        if id != usize::MAX && sizes[id] <= max_size {
            *c = UNKNOWN;
        }
    });
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, s};

    #[test]
    fn block_in_unknown_keeps_only_center() {
        let mut g = Array2::zeros((5, 5));
        g.slice_mut(s![1..4, 1..4]).fill(3u8);
        let e = erode_labels(&g);
        let mut want = Array2::zeros((5, 5));
        want[(2, 2)] = 3;
        assert_eq!(e, want);
    }

    #[test]
    fn uniform_grid_loses_border() {
        let g = Array2::from_elem((6, 7), 4u8);
        let e = erode_labels(&g);
        for ((i, j), &c) in e.indexed_iter() {
            let border = i == 0 || j == 0 || i == 5 || j == 6;
            assert_eq!(c, if border { 0 } else { 4 });
        }
    }

    #[test]
    fn all_unknown_unchanged() {
        let g = Array2::<u8>::zeros((4, 4));
        assert_eq!(erode_labels(&g), g);
        assert_eq!(remove_small_components(&g, 4), g);
    }

    #[test]
    fn diagonal_contact_erodes() {
        let mut g = Array2::from_elem((5, 5), 1u8);
        g[(1, 1)] = 2;
        let e = erode_labels(&g);
        assert_eq!(e[(2, 2)], 0);
        assert_eq!(e[(3, 3)], 1);
    }

    #[test]
    fn square_of_four_removed() {
        let mut g = Array2::zeros((6, 6));
        g.slice_mut(s![2..4, 2..4]).fill(5u8);
        assert!(remove_small_components(&g, 4).iter().all(|&c| c == 0));
    }

    #[test]
    fn plus_of_five_kept() {
        let g = arr2(&[
            [0u8, 0, 0, 0, 0],
            [0, 0, 2, 0, 0],
            [0, 2, 2, 2, 0],
            [0, 0, 2, 0, 0],
            [0, 0, 0, 0, 0],
        ]);
        assert_eq!(remove_small_components(&g, 4), g);
    }

    #[test]
    fn diagonal_chain_is_not_connected() {
        // Five diagonal pixels form five components of size one.
        let g = Array2::from_shape_fn((5, 5), |(i, j)| if i == j { 1u8 } else { 0 });
        let (_, sizes) = label_components(&g);
        assert_eq!(sizes, vec![1; 5]);
        assert!(remove_small_components(&g, 4).iter().all(|&c| c == 0));
    }

    #[test]
    fn adjacent_classes_are_separate_components() {
        let g = arr2(&[[1u8, 1, 1, 2, 2, 2], [1, 1, 1, 2, 2, 2]]);
        let (_, sizes) = label_components(&g);
        assert_eq!(sizes, vec![6, 6]);
    }
}
