//! Sparse feature vectors and tile coding.

use serde::{Deserialize, Serialize};

/// Sparse feature vector: `(index, value)` pairs with distinct indices.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Features {
    entries: Vec<(usize, f64)>,
}

impl Features {
    /// Binary features: value 1 at each index.
    pub fn binary(indices: &[usize]) -> Self {
        Features { entries: indices.iter().map(|&i| (i, 1.0)).collect() }
    }

    /// Non-zero entries of a dense vector.
    pub fn dense(values: &[f64]) -> Self {
        Features {
            entries: values.iter().copied().enumerate().filter(|(_, v)| *v != 0.0).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn dot(&self, w: &[f64]) -> f64 {
        self.entries.iter().map(|&(i, v)| w[i] * v).sum()
    }
}

/// Grid tilings over a bounded box, each displaced by a fraction of a tile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TileCoder {
    pub num_tilings: usize,
    pub tiles_per_dim: Vec<usize>,
    pub state_bounds: Vec<(f64, f64)>,
    /// Per tiling, per dimension displacement in units of one tile width, in `[0, 1)`.
    pub offsets: Vec<Vec<f64>>,
}

impl TileCoder {
    /// Tiling `t` is shifted by `t * (2d + 1) / num_tilings` tiles along
    /// dimension `d` (modulo one tile), the usual asymmetric odd displacement.
    pub fn new(num_tilings: usize, tiles_per_dim: Vec<usize>, state_bounds: Vec<(f64, f64)>) -> Self {
        assert!(num_tilings >= 1, "at least one tiling");
        assert_eq!(tiles_per_dim.len(), state_bounds.len());
        assert!(tiles_per_dim.iter().all(|&n| n >= 1));
        let offsets = (0..num_tilings)
            .map(|t| {
                (0..state_bounds.len())
                    .map(|d| ((t * (2 * d + 1)) % num_tilings) as f64 / num_tilings as f64)
                    .collect()
            })
            .collect();
        TileCoder { num_tilings, tiles_per_dim, state_bounds, offsets }
    }

    /// Tiles per dimension inside one tiling; shifted tilings need one extra.
    fn slots(&self, d: usize) -> usize {
        self.tiles_per_dim[d] + usize::from(self.num_tilings > 1)
    }

    fn per_tiling(&self) -> usize {
        (0..self.tiles_per_dim.len()).map(|d| self.slots(d)).product()
    }

    pub fn num_features(&self) -> usize {
        self.num_tilings * self.per_tiling()
    }

    /// Active feature index for each tiling, ascending. States outside the
    /// bounds are clamped onto them.
    pub fn active(&self, s: &[f64]) -> Vec<usize> {
        let per = self.per_tiling();
        (0..self.num_tilings)
            .map(|t| {
                let mut flat = 0;
                for (d, &(lo, hi)) in self.state_bounds.iter().enumerate() {
                    let n = self.tiles_per_dim[d];
                    let x = s[d].clamp(lo, hi);
                    let width = (hi - lo) / n as f64;
                    let pos = ((x - lo) / width + self.offsets[t][d]).floor();
                    let cell = (pos.max(0.0) as usize).min(self.slots(d) - 1);
                    flat = flat * self.slots(d) + cell;
                }
                t * per + flat
            })
            .collect()
    }

    pub fn features(&self, s: &[f64]) -> Features {
        Features::binary(&self.active(s))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_tiling_floor() {
        let tc = TileCoder::new(1, vec![10], vec![(0.0, 1.0)]);
        assert_eq!(tc.active(&[0.35]), vec![3]);
        assert_eq!(tc.active(&[0.0]), vec![0]);
        assert_eq!(tc.active(&[1.0]), vec![9]);
        assert_eq!(tc.active(&[7.0]), vec![9]);
        assert_eq!(tc.num_features(), 10);
    }

    #[test]
    fn bounds_map_to_first_and_last_tiles() {
        let tc = TileCoder::new(4, vec![5], vec![(-1.0, 1.0)]);
        let per = 6;
        let lo = tc.active(&[-1.0]);
        let hi = tc.active(&[1.0]);
        for t in 0..4 {
            assert_eq!(lo[t], t * per);
            assert_eq!(hi[t], t * per + per - 1);
        }
    }

    #[test]
    fn exactly_one_feature_per_tiling() {
        let tc = TileCoder::new(8, vec![8, 8], vec![(-1.2, 0.5), (-0.07, 0.07)]);
        for i in 0..50 {
            let s = [-1.2 + 1.7 * i as f64 / 49.0, -0.07 + 0.14 * ((i * 7) % 50) as f64 / 49.0];
            let a = tc.active(&s);
            assert_eq!(a.len(), 8);
            assert!(a.windows(2).all(|w| w[0] < w[1]));
            assert!(a.iter().all(|&i| i < tc.num_features()));
        }
    }

    fn shares(tc: &TileCoder, x: f64, y: f64) -> bool {
        let b = tc.active(&[y]);
        tc.active(&[x]).iter().any(|i| b.contains(i))
    }

    // Exhaustive 1-D grid check. With n tilings the union of tile edges is
    // spaced w/n apart, so points closer than (n-1)/n tile widths always share
    // a tile, while a gap just under one full width can cross an edge of every tiling.
    #[test]
    fn nearby_states_share_features() {
        for n in [2usize, 4, 8] {
            let tc = TileCoder::new(n, vec![10], vec![(0.0, 1.0)]);
            let width = 0.1;
            let reach = width * (n as f64 - 1.0) / n as f64;
            let grid: Vec<f64> = (0..=2000).map(|i| i as f64 / 2000.0).collect();
            for (i, &x) in grid.iter().enumerate() {
                for &y in &grid[i..] {
                    if y - x < reach - 1e-9 {
                        assert!(shares(&tc, x, y), "n={n}: {x} {y}");
                    }
                }
            }
        }
        let tc = TileCoder::new(4, vec![10], vec![(0.0, 1.0)]);
        assert!(!shares(&tc, 0.024, 0.1001));
    }
}
