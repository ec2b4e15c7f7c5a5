//! Brute-force oracles and random fixtures shared by the integration and
//! acceptance tests. Each oracle is written independently of the library
//! code it checks.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::Path;

use chrono::{NaiveDate, NaiveDateTime};
use croplabel::composite::{Scene, OPAQUE_CLOUD_BIT};
use croplabel::region_grow::{GrowParams, ProbabilityGrid};
use ndarray::{Array2, Array3};
use rand::Rng;

pub const UNKNOWN: u8 = 0;

/// Per-class binary erosion: a class survives where the 3×3 window,
/// padded with "absent", is entirely that class.
pub fn erode_oracle(codes: &Array2<u8>) -> Array2<u8> {
    let (h, w) = codes.dim();
    let mut out = Array2::zeros((h, w));
    let classes: Vec<u8> = {
        let mut v: Vec<u8> = codes.iter().copied().filter(|&c| c != UNKNOWN).collect();
        v.sort();
        v.dedup();
        v
    };
    for k in classes {
        let present = |y: i64, x: i64| {
            y >= 0
                && x >= 0
                && (y as usize) < h
                && (x as usize) < w
                && codes[(y as usize, x as usize)] == k
        };
        for i in 0..h {
            for j in 0..w {
                let mut all = true;
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        all &= present(i as i64 + dy, j as i64 + dx);
                    }
                }
                if all {
                    out[(i, j)] = k;
                }
            }
        }
    }
    out
}

fn find(parent: &mut [usize], x: usize) -> usize {
    let mut r = x;
    while parent[r] != r {
        r = parent[r];
    }
    let mut y = x;
    while parent[y] != r {
        let next = parent[y];
        parent[y] = r;
        y = next;
    }
    r
}

/// Union-find over 4-adjacent equal known codes; components of at most
/// `max_size` pixels become unknown.
pub fn remove_small_oracle(codes: &Array2<u8>, max_size: usize) -> Array2<u8> {
    let (h, w) = codes.dim();
    let mut parent: Vec<usize> = (0..h * w).collect();
    for i in 0..h {
        for j in 0..w {
            let c = codes[(i, j)];
            if c == UNKNOWN {
                continue;
            }
            if i + 1 < h && codes[(i + 1, j)] == c {
                let (a, b) = (
                    find(&mut parent, i * w + j),
                    find(&mut parent, (i + 1) * w + j),
                );
                parent[a] = b;
            }
            if j + 1 < w && codes[(i, j + 1)] == c {
                let (a, b) = (
                    find(&mut parent, i * w + j),
                    find(&mut parent, i * w + j + 1),
                );
                parent[a] = b;
            }
        }
    }
    let roots: Vec<usize> = (0..h * w).map(|p| find(&mut parent, p)).collect();
    let mut sizes: HashMap<usize, usize> = HashMap::new();
    for p in 0..h * w {
        if codes[(p / w, p % w)] != UNKNOWN {
            *sizes.entry(roots[p]).or_default() += 1;
        }
    }
    Array2::from_shape_fn((h, w), |(i, j)| {
        let c = codes[(i, j)];
        if c == UNKNOWN || sizes[&roots[i * w + j]] <= max_size {
            UNKNOWN
        } else {
            c
        }
    })
}

/// Anchors, then repeated 4-neighbour dilation restricted to grow-eligible
/// pixels until nothing changes, then the single-claim rule.
pub fn region_grow_oracle(
    probs: &Array3<f32>,
    valid: &Array2<bool>,
    params: GrowParams,
) -> Array2<u8> {
    let (h, w, k) = probs.dim();
    let mut claims = Array2::<u32>::zeros((h, w));
    let mut owner = Array2::<u8>::zeros((h, w));
    for c in 0..k {
        let mut region = Array2::from_shape_fn((h, w), |(i, j)| {
            valid[(i, j)] && probs[(i, j, c)] > params.anchor
        });
        loop {
            let mut changed = false;
            for i in 0..h {
                for j in 0..w {
                    if region[(i, j)] || !valid[(i, j)] || probs[(i, j, c)] < params.grow {
                        continue;
                    }
                    let touches = (i > 0 && region[(i - 1, j)])
                        || (i + 1 < h && region[(i + 1, j)])
                        || (j > 0 && region[(i, j - 1)])
                        || (j + 1 < w && region[(i, j + 1)]);
                    if touches {
                        region[(i, j)] = true;
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        for ((i, j), &r) in region.indexed_iter() {
            if r {
                claims[(i, j)] += 1;
                owner[(i, j)] = c as u8 + 1;
            }
        }
    }
    Array2::from_shape_fn((h, w), |p| if claims[p] == 1 { owner[p] } else { UNKNOWN })
}

/// Random softmax grid with planted confident blobs so anchors exist.
pub fn random_probability_grid(
    rng: &mut impl Rng,
    h: usize,
    w: usize,
    k: usize,
) -> ProbabilityGrid {
    let mut logits = Array3::from_shape_fn((h, w, k), |_| rng.gen_range(-1.0f32..1.0));
    for _ in 0..rng.gen_range(1..=4) {
        let (ci, cj, c) = (
            rng.gen_range(0..h),
            rng.gen_range(0..w),
            rng.gen_range(0..k),
        );
        let r = rng.gen_range(1..=4) as i64;
        let boost = rng.gen_range(2.0f32..6.0);
        for i in 0..h {
            for j in 0..w {
                if (i as i64 - ci as i64).abs() + (j as i64 - cj as i64).abs() <= r {
                    logits[(i, j, c)] += boost;
                }
            }
        }
    }
    let mut probs = Array3::<f32>::zeros((h, w, k));
    for i in 0..h {
        for j in 0..w {
            let top = (0..k)
                .map(|c| logits[(i, j, c)])
                .fold(f32::NEG_INFINITY, f32::max);
            let z: f32 = (0..k).map(|c| (logits[(i, j, c)] - top).exp()).sum();
            for c in 0..k {
                probs[(i, j, c)] = (logits[(i, j, c)] - top).exp() / z;
            }
        }
    }
    let valid = Array2::from_shape_fn((h, w), |_| rng.gen_bool(0.95));
    ProbabilityGrid::new("rand", probs, valid).expect("softmax grid")
}

/// Random label raster with blocky regions and some unknown pixels.
pub fn random_labels(rng: &mut impl Rng, h: usize, w: usize, classes: u8) -> Array2<u8> {
    let mut g = Array2::from_shape_fn((h, w), |_| rng.gen_range(0..=classes));
    for _ in 0..rng.gen_range(0..8) {
        let (i0, j0) = (rng.gen_range(0..h), rng.gen_range(0..w));
        let (bh, bw) = (rng.gen_range(1..=h / 2), rng.gen_range(1..=w / 2));
        let c = rng.gen_range(0..=classes);
        for i in i0..(i0 + bh).min(h) {
            for j in j0..(j0 + bw).min(w) {
                g[(i, j)] = c;
            }
        }
    }
    g
}

/// Reference/candidate pairs → (precision, recall, f1, support) per class,
/// accuracy, counted straight from the pixel pairs.
pub struct PairMetrics {
    pub per_class: Vec<(f64, f64, f64, u64)>,
    pub accuracy: f64,
}

pub fn pair_metrics(reference: &Array2<u8>, candidate: &Array2<u8>, k: usize) -> PairMetrics {
    let pairs: Vec<(u8, u8)> = reference
        .iter()
        .zip(candidate.iter())
        .filter(|(&r, &c)| r != UNKNOWN && c != UNKNOWN)
        .map(|(&r, &c)| (r, c))
        .collect();
    let per_class = (1..=k as u8)
        .map(|c| {
            let tp = pairs.iter().filter(|&&(r, p)| r == c && p == c).count() as f64;
            let predicted = pairs.iter().filter(|&&(_, p)| p == c).count() as f64;
            let actual = pairs.iter().filter(|&&(r, _)| r == c).count();
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if actual > 0 { tp / actual as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            (precision, recall, f1, actual as u64)
        })
        .collect();
    let correct = pairs.iter().filter(|(r, c)| r == c).count();
    PairMetrics {
        per_class,
        accuracy: correct as f64 / pairs.len().max(1) as f64,
    }
}

pub fn day(year: i32, ordinal: u32) -> NaiveDateTime {
    NaiveDate::from_yo_opt(year, ordinal)
        .unwrap()
        .and_hms_opt(18, 0, 0)
        .unwrap()
}

/// Scenes of one window whose values encode (scene, pixel, channel).
pub fn planted_scenes(
    rng: &mut impl Rng,
    tile: &str,
    when: &[NaiveDateTime],
    h: usize,
    w: usize,
    c: usize,
    cloud_p: f64,
) -> Vec<Scene> {
    when.iter()
        .enumerate()
        .map(|(s, &t)| {
            let refl = Array3::from_shape_fn((h, w, c), |(i, j, ch)| {
                (s * 1_000_000 + (i * w + j) * 10 + ch) as f32
            });
            let qa = Array2::from_shape_fn((h, w), |_| {
                if rng.gen_bool(cloud_p) {
                    OPAQUE_CLOUD_BIT
                } else {
                    0
                }
            });
            Scene::new(tile, t, refl, qa).unwrap()
        })
        .collect()
}

/// Stable rank by clear-pixel count, then first clear scene per pixel
/// (best-ranked scene where none is clear).
pub fn composite_oracle(scenes: &[Scene]) -> Array3<f32> {
    let (h, w, c) = scenes[0].reflectance.dim();
    let clear = |s: &Scene, i: usize, j: usize| s.qa[(i, j)] & ((1 << 10) | (1 << 11)) == 0;
    let mut order: Vec<usize> = (0..scenes.len()).collect();
    let counts: Vec<usize> = scenes
        .iter()
        .map(|s| {
            (0..h)
                .flat_map(|i| (0..w).map(move |j| (i, j)))
                .filter(|&(i, j)| clear(s, i, j))
                .count()
        })
        .collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]));
    Array3::from_shape_fn((h, w, c), |(i, j, ch)| {
        let src = order
            .iter()
            .copied()
            .find(|&s| clear(&scenes[s], i, j))
            .unwrap_or(order[0]);
        scenes[src].reflectance[(i, j, ch)]
    })
}

pub fn read_u8(path: &Path) -> Array2<u8> {
    croplabel::npy::read_npy(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Reassembles per-grid label artifacts of one tile into a full raster.
pub fn stitch(
    pipeline: &croplabel::pipeline::Pipeline,
    dir: &str,
    kind: croplabel::ArtifactKind,
    tile: &str,
    year: i32,
    size: usize,
    per_side: usize,
) -> Array2<u8> {
    let g = size / per_side;
    let mut out = Array2::zeros((size, size));
    for row in 0..per_side {
        for col in 0..per_side {
            let id = croplabel::GridId::new(tile, year, row, col);
            let part = read_u8(&pipeline.artifact(dir, &id, kind));
            out.slice_mut(ndarray::s![row * g..(row + 1) * g, col * g..(col + 1) * g])
                .assign(&part);
        }
    }
    out
}
