//! Regular grid on the belief simplex: all points `k / r` with `k` a
//! nonnegative integer composition of `r` into `M` parts.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::filter::Belief;

/// Largest number of grid points accepted by [`build_grid`].
pub const MAX_GRID_POINTS: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BeliefGrid {
    num_states: usize,
    resolution: usize,
    compositions: Vec<Vec<u32>>,
    points: Vec<Vec<f64>>,
}

/// Number of compositions of `total` into `parts` nonnegative parts.
pub fn composition_count(total: usize, parts: usize) -> u128 {
    if parts == 0 {
        return u128::from(total == 0);
    }
    binomial((total + parts - 1) as u128, (parts - 1) as u128)
}

fn binomial(n: u128, k: u128) -> u128 {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) / (i + 1);
    }
    acc
}

/// Enumerates the grid in lexicographic order of compositions, so the first
/// point is `(0, …, 0, r)` and the last is `(r, 0, …, 0)`.
pub fn build_grid(num_states: usize, resolution: usize) -> Result<BeliefGrid> {
    if resolution == 0 {
        return Err(Error::InvalidResolution);
    }
    if num_states == 0 {
        return Err(Error::InvalidArgument("grid needs at least one state".into()));
    }
    let count = composition_count(resolution, num_states);
    if count > MAX_GRID_POINTS as u128 {
        return Err(Error::GridTooLarge {
            points: count,
            limit: MAX_GRID_POINTS,
        });
    }
    let mut compositions = Vec::with_capacity(count as usize);
    let mut current = vec![0u32; num_states];
    enumerate(&mut current, 0, resolution as u32, &mut compositions);
    debug_assert_eq!(compositions.len() as u128, count);
    let r = resolution as f64;
    let points = compositions
        .iter()
        .map(|k| k.iter().map(|&ki| f64::from(ki) / r).collect())
        .collect();
    Ok(BeliefGrid {
        num_states,
        resolution,
        compositions,
        points,
    })
}

fn enumerate(current: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for k in 0..=remaining {
        current[pos] = k;
        enumerate(current, pos + 1, remaining - k, out);
    }
}

impl BeliefGrid {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn point(&self, ordinal: usize) -> &[f64] {
        &self.points[ordinal]
    }

    pub fn points(&self) -> &[Vec<f64>] {
        &self.points
    }

    pub fn composition(&self, ordinal: usize) -> &[u32] {
        &self.compositions[ordinal]
    }

    pub fn belief(&self, ordinal: usize) -> Belief {
        Belief::new(self.points[ordinal].clone()).expect("grid points are on the simplex")
    }

    /// Ordinal of a composition by counting the compositions that precede it
    /// lexicographically. `None` if `k` is not a composition of `r`.
    pub fn ordinal_of(&self, k: &[u32]) -> Option<usize> {
        if k.len() != self.num_states || k.iter().map(|&v| v as usize).sum::<usize>() != self.resolution {
            return None;
        }
        let mut rank: u128 = 0;
        let mut remaining = self.resolution;
        for (i, &ki) in k.iter().enumerate().take(self.num_states - 1) {
            let parts_after = self.num_states - i - 1;
            for j in 0..ki as usize {
                rank += composition_count(remaining - j, parts_after);
            }
            remaining -= ki as usize;
        }
        Some(rank as usize)
    }

    /// Nearest grid point in Euclidean distance; ties go to the smaller
    /// ordinal.
    ///
    /// The nearest composition rounds every scaled coordinate `r·x[m]` down
    /// or up, so it is found by flooring and then incrementing the `D`
    /// coordinates with the largest fractional parts, where `D` is the
    /// remaining deficit. Equal fractional parts are resolved towards later
    /// coordinates, which gives the lexicographically smallest composition.
    pub fn project(&self, x: &[f64]) -> usize {
        let r = self.resolution as f64;
        let mut k: Vec<u32> = Vec::with_capacity(self.num_states);
        let mut frac: Vec<(f64, usize)> = Vec::with_capacity(self.num_states);
        let mut total: i64 = 0;
        for (m, &xm) in x.iter().enumerate() {
            let y = (xm.max(0.0) * r).min(r);
            let f = y.floor();
            k.push(f as u32);
            total += f as i64;
            frac.push((y - f, m));
        }
        let mut deficit = self.resolution as i64 - total;
        if deficit > 0 {
            frac.sort_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
            for &(_, m) in frac.iter().take(deficit as usize) {
                k[m] += 1;
            }
        } else if deficit < 0 {
            // Only reachable when the input sums above one; shave the
            // smallest remainders, earliest coordinates first.
            frac.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut idx = 0;
            while deficit < 0 {
                let m = frac[idx % frac.len()].1;
                if k[m] > 0 {
                    k[m] -= 1;
                    deficit += 1;
                }
                idx += 1;
            }
        }
        self.ordinal_of(&k).expect("projection yields a composition")
    }

    /// Ordinal of the point closest to the uniform belief.
    pub fn uniform_ordinal(&self) -> usize {
        self.project(&vec![1.0 / self.num_states as f64; self.num_states])
    }

    /// Ordinals of the `M` vertices.
    pub fn vertex_ordinals(&self) -> Vec<usize> {
        (0..self.num_states)
            .map(|m| {
                let mut k = vec![0u32; self.num_states];
                k[m] = self.resolution as u32;
                self.ordinal_of(&k).expect("vertex is a composition")
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_nearest(grid: &BeliefGrid, x: &[f64]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, p) in grid.points().iter().enumerate() {
            let d: f64 = p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    #[test]
    fn two_state_grid_lists_k_over_r() {
        let g = build_grid(2, 10).unwrap();
        assert_eq!(g.len(), 11);
        for k in 0..=10 {
            assert_eq!(g.composition(k), &[k as u32, 10 - k as u32]);
            assert!((g.point(k)[0] - k as f64 / 10.0).abs() < 1e-15);
        }
    }

    #[test]
    fn three_state_grid_size_is_binomial() {
        // C(12, 2) = 66
        assert_eq!(build_grid(3, 10).unwrap().len(), 66);
        assert_eq!(composition_count(10, 3), 66);
    }

    #[test]
    fn resolution_one_is_the_vertices() {
        let g = build_grid(2, 1).unwrap();
        assert_eq!(g.points(), &[vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn bad_sizes_error() {
        assert!(matches!(build_grid(2, 0), Err(Error::InvalidResolution)));
        assert!(matches!(build_grid(10, 40), Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn grid_contains_vertices_and_centre() {
        let g = build_grid(2, 10).unwrap();
        assert_eq!(g.vertex_ordinals(), vec![10, 0]);
        assert_eq!(g.point(g.uniform_ordinal()), &[0.5, 0.5]);
    }

    #[test]
    fn ordinal_matches_enumeration() {
        for (m, r) in [(2, 7), (3, 6), (4, 5)] {
            let g = build_grid(m, r).unwrap();
            for i in 0..g.len() {
                assert_eq!(g.ordinal_of(g.composition(i)), Some(i));
            }
        }
    }

    #[test]
    fn projection_examples() {
        let g = build_grid(2, 10).unwrap();
        for i in 0..g.len() {
            assert_eq!(g.project(g.point(i)), i);
        }
        assert_eq!(g.point(g.project(&[0.26, 0.74])), &[0.3, 0.7]);
        // Equidistant from 0.2 and 0.3: the earlier composition (2, 8) wins.
        assert_eq!(g.composition(g.project(&[0.25, 0.75])), &[2, 8]);
        assert_eq!(g.project(&[0.25, 0.75]), brute_nearest(&g, &[0.25, 0.75]));
    }

    proptest! {
        #[test]
        fn projection_agrees_with_brute_force(
            (m, r, raw) in (2usize..=4, 1usize..=12)
                .prop_flat_map(|(m, r)| (Just(m), Just(r), proptest::collection::vec(0.0f64..1.0, m)))
        ) {
            let s: f64 = raw.iter().sum();
            prop_assume!(s > 1e-9);
            let x: Vec<f64> = raw.iter().map(|v| v / s).collect();
            let g = build_grid(m, r).unwrap();
            let fast = g.project(&x);
            let slow = brute_nearest(&g, &x);
            let d = |i: usize| g.point(i).iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            // Same point, or a floating-point tie between equidistant points.
            prop_assert!(fast == slow || (d(fast) - d(slow)).abs() < 1e-14);
        }
    }
}
