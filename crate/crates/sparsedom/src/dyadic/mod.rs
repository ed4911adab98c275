//! Dyadic lattices and cube algebra.
//!
//! Generation-`k` cubes have side `2^{-k}`. Corners are stored as integers in
//! units of `2^{-k}/3`, which represents both the plain lattice (corners at
//! multiples of the side) and the shifted prototype lattice whose odd/even
//! generations carry `-1/3`- and `-2/3`-of-a-side offsets. All containment
//! and disjointness tests are exact integer arithmetic.

mod cz;
mod resolution;
mod whitney;

pub use cz::{conditional_expectation, cz_decompose, expectation_block, martingale_difference, CzDecomposition};
pub use resolution::LpResolution;
pub use whitney::{whitney, WhitneyFamily, WhitneyReport};

use crate::grid::{CubeGeom, Grid};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Lattice rule: plain dyadic grids, or the alternating third-shifted
/// prototype (a dyadic lattice in the Lerner–Nazarov sense).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LatticeRule {
    Plain,
    Shifted,
}

/// A dyadic cube of generation `k` (side `2^{-k}`); corner coordinates are
/// `corner_num * 2^{-k} / 3` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DyadicCube {
    pub k: i32,
    pub corner_num: [i64; 2],
    pub dim: usize,
}

impl DyadicCube {
    /// Plain cube with corner `z * 2^{-k}`.
    pub fn plain(dim: usize, k: i32, z: [i64; 2]) -> DyadicCube {
        DyadicCube { k, corner_num: [3 * z[0], 3 * z[1]], dim }
    }

    /// Prototype shifted cube indexed by `z`: for odd `k` the corner sits at
    /// `(z - 1/3) 2^{-k}`, for even `k` at `(z - 2/3) 2^{-k}`.
    pub fn shifted(dim: usize, k: i32, z: [i64; 2]) -> DyadicCube {
        let off = if k.rem_euclid(2) == 1 { -1 } else { -2 };
        DyadicCube { k, corner_num: [3 * z[0] + off, 3 * z[1] + off], dim }
    }

    pub fn side(&self) -> f64 {
        (-self.k as f64).exp2()
    }

    pub fn corner_coord(&self, axis: usize) -> f64 {
        let c = self.corner_num[axis];
        if c % 3 == 0 {
            (c / 3) as f64 * self.side()
        } else {
            c as f64 * self.side() / 3.0
        }
    }

    pub fn geom(&self) -> CubeGeom {
        CubeGeom::new(self.dim, [self.corner_coord(0), self.corner_coord(1)], self.side())
    }

    /// Triple `3Q`: the concentric cube with three times the side.
    pub fn triple_geom(&self) -> CubeGeom {
        self.geom().dilate(3.0)
    }

    /// The `2^d` children (generation `k+1`), partitioning the cube exactly.
    pub fn children(&self) -> Vec<DyadicCube> {
        let base = [2 * self.corner_num[0], 2 * self.corner_num[1]];
        let mut out = Vec::with_capacity(1 << self.dim);
        let reps = if self.dim == 1 { [0, 0] } else { [0, 1] };
        for b1 in 0..=reps[1] {
            for b0 in 0..=1i64 {
                let mut c = base;
                c[0] += 3 * b0;
                c[1] += 3 * b1;
                out.push(DyadicCube { k: self.k + 1, corner_num: c, dim: self.dim });
            }
        }
        out
    }

    /// Containment `other ⊆ self` (exact; requires `self.k <= other.k`).
    pub fn contains_cube(&self, other: &DyadicCube) -> bool {
        if self.k > other.k || self.dim != other.dim {
            return false;
        }
        let scale = 1i64 << (other.k - self.k);
        (0..self.dim).all(|a| {
            let lo = self.corner_num[a] * scale;
            let hi = (self.corner_num[a] + 3) * scale;
            lo <= other.corner_num[a] && other.corner_num[a] + 3 <= hi
        })
    }

    pub fn disjoint_from(&self, other: &DyadicCube) -> bool {
        let (coarse, fine) = if self.k <= other.k { (self, other) } else { (other, self) };
        let scale = 1i64 << (fine.k - coarse.k);
        (0..self.dim).any(|a| {
            let lo = coarse.corner_num[a] * scale;
            let hi = (coarse.corner_num[a] + 3) * scale;
            fine.corner_num[a] + 3 <= lo || fine.corner_num[a] >= hi
        })
    }

    /// Parent within the given lattice rule.
    pub fn parent(&self, rule: LatticeRule) -> DyadicCube {
        match rule {
            LatticeRule::Plain => {
                let z = [self.corner_num[0] / 3, self.corner_num[1] / 3];
                DyadicCube::plain(self.dim, self.k - 1, [z[0].div_euclid(2), z[1].div_euclid(2)])
            }
            LatticeRule::Shifted => {
                let k = self.k - 1;
                let off = if k.rem_euclid(2) == 1 { -1i64 } else { -2 };
                let mut z = [0i64; 2];
                for a in 0..self.dim {
                    // largest z with 2(3z + off) <= corner_num
                    z[a] = (self.corner_num[a] - 2 * off).div_euclid(6);
                }
                let p = DyadicCube::shifted(self.dim, k, z);
                debug_assert!(p.contains_cube(self), "parent {p:?} of {self:?}");
                p
            }
        }
    }
}

/// All generation-`k` cubes of the lattice that meet the extent; they tile it.
pub fn lattice_cubes(rule: LatticeRule, dim: usize, k: i32, extent: &CubeGeom) -> Vec<DyadicCube> {
    let side = (-k as f64).exp2();
    let mut ranges = [(0i64, 0i64); 2];
    for a in 0..dim {
        let shift = match rule {
            LatticeRule::Plain => 0.0,
            LatticeRule::Shifted => {
                if k.rem_euclid(2) == 1 {
                    -side / 3.0
                } else {
                    -2.0 * side / 3.0
                }
            }
        };
        // z range with z*side + shift < extent end and (z+1)*side + shift > start
        let lo = ((extent.corner[a] - shift) / side).floor() as i64;
        let hi = ((extent.corner[a] + extent.side - shift) / side).ceil() as i64;
        ranges[a] = (lo, hi);
    }
    let mk = |z: [i64; 2]| match rule {
        LatticeRule::Plain => DyadicCube::plain(dim, k, z),
        LatticeRule::Shifted => DyadicCube::shifted(dim, k, z),
    };
    let mut out = Vec::new();
    if dim == 1 {
        for z0 in ranges[0].0..ranges[0].1 {
            out.push(mk([z0, 0]));
        }
    } else {
        for z1 in ranges[1].0..ranges[1].1 {
            for z0 in ranges[0].0..ranges[0].1 {
                out.push(mk([z0, z1]));
            }
        }
    }
    // drop cubes that do not actually meet the extent (edge rounding)
    out.retain(|q| {
        let g = q.geom();
        (0..dim).all(|a| {
            g.corner[a] < extent.corner[a] + extent.side && g.corner[a] + g.side > extent.corner[a]
        })
    });
    out.sort();
    out
}

/// Generation of the cell scale for this grid. Requires the cell side to be
/// a power of two.
pub fn cell_generation(grid: &Grid) -> Result<i32> {
    let h = grid.h();
    let kh = -h.log2();
    if (kh - kh.round()).abs() > 1e-9 {
        return Err(Error::BadParameter(
            "grid cell side must be a power of two for dyadic operations".into(),
        ));
    }
    Ok(kh.round() as i32)
}

/// Plain cube made of whole grid cells: anchor cell index and side `2^j` cells.
pub fn cube_from_cells(grid: &Grid, start: [i64; 2], j: u32) -> Result<DyadicCube> {
    let k_cell = cell_generation(grid)?;
    let k = k_cell - j as i32;
    let side = (1i64 << j) as f64 * grid.h();
    let mut corner_num = [0i64; 2];
    for a in 0..grid.dim {
        let corner = grid.coord(start[a]);
        let cn = (corner / side * 3.0).round();
        if (corner / side * 3.0 - cn).abs() > 1e-6 {
            return Err(Error::BadParameter("cell block is not dyadic-aligned".into()));
        }
        corner_num[a] = cn as i64;
    }
    Ok(DyadicCube { k, corner_num, dim: grid.dim })
}

/// Three Lattice Theorem split: assigns each cube (understood through its
/// triple `3Q`) one of `3^d` classes such that the triples within a class are
/// pairwise nested or disjoint. Input cubes must be plain-lattice cubes.
pub fn three_lattice_split(cubes: &[DyadicCube]) -> Result<Vec<usize>> {
    let mut classes = Vec::with_capacity(cubes.len());
    for q in cubes {
        if q.corner_num.iter().take(q.dim).any(|c| c.rem_euclid(3) != 0) {
            return Err(Error::NotTripleFamily("cube is not a plain lattice cube".into()));
        }
        let mut class = 0usize;
        for a in 0..q.dim {
            // corner of 3Q in units of 2^{-k}: z - 1
            let m = q.corner_num[a] / 3 - 1;
            let t = m.rem_euclid(3) as usize;
            // residues alternate with generation parity (2^k mod 3)
            let nu = if q.k.rem_euclid(2) == 0 { t } else { (2 * t) % 3 };
            class = class * 3 + nu;
        }
        classes.push(class);
    }
    for i in 0..cubes.len() {
        for j in i + 1..cubes.len() {
            if classes[i] != classes[j] {
                continue;
            }
            let (a, b) = (&cubes[i], &cubes[j]);
            if !triples_nested_or_disjoint(a, b) {
                return Err(Error::NotTripleFamily(format!(
                    "triples of {a:?} and {b:?} overlap without nesting in class {}",
                    classes[i]
                )));
            }
        }
    }
    Ok(classes)
}

/// Exact nested-or-disjoint test for the triples of two plain cubes.
pub fn triples_nested_or_disjoint(a: &DyadicCube, b: &DyadicCube) -> bool {
    let (coarse, fine) = if a.k <= b.k { (a, b) } else { (b, a) };
    let scale = 1i64 << (fine.k - coarse.k);
    let mut disjoint_somewhere = false;
    let mut nested_everywhere = true;
    for axis in 0..a.dim {
        // triple corners in units of 2^{-k_fine}
        let clo = (coarse.corner_num[axis] / 3 - 1) * scale;
        let chi = clo + 3 * scale;
        let flo = fine.corner_num[axis] / 3 - 1;
        let fhi = flo + 3;
        if fhi <= clo || flo >= chi {
            disjoint_somewhere = true;
        }
        if !(clo <= flo && fhi <= chi) {
            nested_everywhere = false;
        }
    }
    disjoint_somewhere || nested_everywhere
}
