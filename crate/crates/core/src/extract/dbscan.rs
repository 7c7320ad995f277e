//! DBSCAN over exceedance cells of a raster.

use alloc::collections::VecDeque;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

/// Cluster the cells of `values` (row-major, `n_x` fastest) exceeding `v`.
///
/// Two cells are neighbours when their centres lie within `eps`. Only cells
/// for which `eligible` returns true take part. Clusters are seeded in raster
/// scan order, so labelling is deterministic; each returned cluster lists its
/// cells in ascending index order. Noise cells are dropped.
pub fn dbscan_exceedances(
    values: &[f64],
    n_x: usize,
    n_y: usize,
    v: f64,
    eps: f64,
    min_pts: usize,
    eligible: impl Fn(usize) -> bool,
) -> Vec<Vec<usize>> {
    let r = eps.floor() as i64;
    let offsets: Vec<(i64, i64)> = (-r..=r)
        .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
        .filter(|&(dx, dy)| ((dx * dx + dy * dy) as f64) <= eps * eps)
        .collect();
    let point: Vec<bool> = (0..values.len()).map(|i| values[i] > v && eligible(i)).collect();
    let neighbours = |i: usize| {
        let (x, y) = ((i % n_x) as i64, (i / n_x) as i64);
        offsets.iter().filter_map(move |&(dx, dy)| {
            let (nx, ny) = (x + dx, y + dy);
            if nx < 0 || ny < 0 || nx >= n_x as i64 || ny >= n_y as i64 {
                return None;
            }
            Some(ny as usize * n_x + nx as usize)
        })
    };
    let core: Vec<bool> = (0..values.len())
        .map(|i| point[i] && neighbours(i).filter(|&j| point[j]).count() >= min_pts)
        .collect();

    const UNSET: usize = usize::MAX;
    let mut label = vec![UNSET; values.len()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut queue = VecDeque::new();
    for seed in 0..values.len() {
        if !core[seed] || label[seed] != UNSET {
            continue;
        }
        let id = clusters.len();
        let mut members = vec![seed];
        label[seed] = id;
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            for j in neighbours(i) {
                if point[j] && label[j] == UNSET {
                    label[j] = id;
                    members.push(j);
                    if core[j] {
                        queue.push_back(j);
                    }
                }
            }
        }
        members.sort_unstable();
        clusters.push(members);
    }
    clusters
}
