//! Cell masks: subsets of grid cells as packed bitsets.

use crate::grid::{CubeGeom, Grid};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMask {
    pub cells: usize,
    words: Vec<u64>,
}

impl CellMask {
    pub fn empty(cells: usize) -> CellMask {
        CellMask { cells, words: vec![0; cells.div_ceil(64)] }
    }

    pub fn full(cells: usize) -> CellMask {
        let mut m = CellMask::empty(cells);
        for c in 0..cells {
            m.set(c);
        }
        m
    }

    pub fn from_cube(grid: &Grid, cube: &CubeGeom) -> CellMask {
        let mut m = CellMask::empty(grid.cells());
        for c in cube.cells_in_extent(grid) {
            m.set(c);
        }
        m
    }

    pub fn set(&mut self, c: usize) {
        self.words[c / 64] |= 1 << (c % 64);
    }

    pub fn clear(&mut self, c: usize) {
        self.words[c / 64] &= !(1 << (c % 64));
    }

    pub fn get(&self, c: usize) -> bool {
        self.words[c / 64] & (1 << (c % 64)) != 0
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn any(&self) -> bool {
        self.words.iter().any(|w| *w != 0)
    }

    pub fn union_with(&mut self, other: &CellMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= b;
        }
    }

    pub fn subtract(&mut self, other: &CellMask) {
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a &= !b;
        }
    }

    pub fn intersect_count(&self, other: &CellMask) -> usize {
        self.words.iter().zip(&other.words).map(|(a, b)| (a & b).count_ones() as usize).sum()
    }

    pub fn is_subset_of(&self, other: &CellMask) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & !b == 0)
    }

    pub fn is_disjoint_from(&self, other: &CellMask) -> bool {
        self.words.iter().zip(&other.words).all(|(a, b)| a & b == 0)
    }

    pub fn complement(&self) -> CellMask {
        let mut m = self.clone();
        for w in &mut m.words {
            *w = !*w;
        }
        for c in self.cells..self.words.len() * 64 {
            m.clear(c);
        }
        m
    }

    pub fn iter_ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.cells).filter(move |&c| self.get(c))
    }

    /// Run-length encoding `[(start, len)]` for compact serialization.
    pub fn to_runs(&self) -> Vec<(usize, usize)> {
        let mut runs = Vec::new();
        let mut c = 0;
        while c < self.cells {
            if self.get(c) {
                let start = c;
                while c < self.cells && self.get(c) {
                    c += 1;
                }
                runs.push((start, c - start));
            } else {
                c += 1;
            }
        }
        runs
    }

    pub fn from_runs(cells: usize, runs: &[(usize, usize)]) -> CellMask {
        let mut m = CellMask::empty(cells);
        for &(start, len) in runs {
            for c in start..start + len {
                m.set(c);
            }
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn runs_roundtrip() {
        let mut m = CellMask::empty(100);
        for c in [0, 1, 2, 50, 51, 99] {
            m.set(c);
        }
        let m2 = CellMask::from_runs(100, &m.to_runs());
        assert_eq!(m, m2);
        assert_eq!(m.count(), 6);
        assert_eq!(m.complement().count(), 94);
        assert!(m.is_subset_of(&CellMask::full(100)));
    }
}
