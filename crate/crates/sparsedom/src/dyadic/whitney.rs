//! Whitney decomposition of open sets given as cell masks.
//!
//! Top-down refinement on the plain grid-anchored lattice: a cube is accepted
//! once `5 diam(W) <= dist(W, complement)`, refined while the distance is too
//! small, and discarded when it misses the set. Acceptance below a failing
//! parent forces `dist <= 12 diam`, the two-sided inequality of the
//! decomposition. Refinement bottoms out at single cells, which are accepted
//! by exhaustion; only those may violate the lower bound (a grid set has no
//! room for infinitely many shrinking cubes near its boundary).

use super::{cube_from_cells, DyadicCube};
use crate::grid::Grid;
use crate::mask::CellMask;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WhitneyFamily {
    pub grid: Grid,
    pub omega: CellMask,
    pub cubes: Vec<DyadicCube>,
    /// Distance from each cube to the complement (cell-exact geometry).
    pub distances: Vec<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct WhitneyReport {
    pub cubes: usize,
    pub single_cell_exempt: usize,
    pub lower_violations: usize,
    pub upper_violations: usize,
    pub union_exact: bool,
    pub disjoint: bool,
}

impl WhitneyReport {
    pub fn ok(&self) -> bool {
        self.lower_violations == 0 && self.upper_violations == 0 && self.union_exact && self.disjoint
    }
}

/// Squared distances (in cells) from every cell to the complement of the
/// mask, where the complement includes everything outside the extent. The
/// distance is between closed cells, so adjacent cells are at distance 0.
fn complement_distance_sq(grid: &Grid, omega: &CellMask) -> Vec<f64> {
    let n = grid.n;
    let cells = grid.cells();
    // sites: complement cells dilated by one cell in the sup norm; distance
    // to a closed cell equals point distance to this dilation
    let inf = f64::INFINITY;
    let mut field = vec![inf; cells];
    for c in 0..cells {
        if !omega.get(c) {
            field[c] = 0.0;
            let m = grid.multi(c);
            for d1 in -1i64..=1 {
                for d0 in -1i64..=1 {
                    let i0 = m[0] as i64 + d0;
                    let i1 = m[1] as i64 + if grid.dim == 2 { d1 } else { 0 };
                    if i0 >= 0 && i0 < n as i64 && i1 >= 0 && i1 < n as i64 {
                        let idx = if grid.dim == 1 { i0 as usize } else { i0 as usize + n * i1 as usize };
                        field[idx] = 0.0;
                    }
                }
                if grid.dim == 1 {
                    break;
                }
            }
        }
    }
    // exact squared Euclidean distance transform, axis by axis
    let transform_line = |f: &mut [f64]| {
        let m = f.len();
        let mut d = vec![inf; m];
        // lower envelope of parabolas (Felzenszwalb–Huttenlocher)
        let mut v = vec![0usize; m];
        let mut z = vec![0.0f64; m + 1];
        let mut k = 0usize;
        let mut started = false;
        for (q, &fq) in f.iter().enumerate() {
            if fq.is_infinite() {
                continue;
            }
            if !started {
                v[0] = q;
                z[0] = -inf;
                z[1] = inf;
                started = true;
                continue;
            }
            let mut s;
            loop {
                let p = v[k];
                s = ((fq + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
                if s <= z[k] {
                    k -= 1;
                } else {
                    break;
                }
            }
            k += 1;
            v[k] = q;
            z[k] = s;
            z[k + 1] = inf;
        }
        if !started {
            return; // no sites on this line
        }
        let mut k2 = 0usize;
        for (q, dq) in d.iter_mut().enumerate() {
            while z[k2 + 1] < q as f64 {
                k2 += 1;
            }
            let p = v[k2];
            *dq = (q as f64 - p as f64).powi(2) + f[p];
        }
        f.copy_from_slice(&d);
    };
    match grid.dim {
        1 => transform_line(&mut field),
        _ => {
            let mut row = vec![0.0f64; n];
            for i1 in 0..n {
                row.copy_from_slice(&field[i1 * n..(i1 + 1) * n]);
                transform_line(&mut row);
                field[i1 * n..(i1 + 1) * n].copy_from_slice(&row);
            }
            let mut col = vec![0.0f64; n];
            for i0 in 0..n {
                for i1 in 0..n {
                    col[i1] = field[i1 * n + i0];
                }
                transform_line(&mut col);
                for i1 in 0..n {
                    field[i1 * n + i0] = col[i1];
                }
            }
        }
    }
    // fold in the distance to the outside of the extent (per closed cell)
    for c in 0..cells {
        let m = grid.multi(c);
        let mut edge = (m[0].min(n - 1 - m[0])) as f64;
        if grid.dim == 2 {
            edge = edge.min(m[1].min(n - 1 - m[1]) as f64);
        }
        field[c] = field[c].min(edge * edge);
    }
    field
}

/// Whitney decomposition of the open set given by `omega`.
pub fn whitney(grid: &Grid, omega: &CellMask) -> Result<WhitneyFamily> {
    if omega.count() == grid.cells() {
        return Err(Error::NoComplement);
    }
    let mut fam = WhitneyFamily {
        grid: *grid,
        omega: omega.clone(),
        cubes: Vec::new(),
        distances: Vec::new(),
    };
    if !omega.any() {
        return Ok(fam);
    }
    let n = grid.n;
    let h = grid.h();
    let dist_sq = complement_distance_sq(grid, omega);
    let dim = grid.dim;
    let dsqrt = (dim as f64).sqrt();

    // any omega cell in the block / min distance over block (block may
    // exceed the extent; outside cells are complement, distance 0)
    struct Frame {
        start: [i64; 2],
        j: u32,
    }
    let block_stats = |start: [i64; 2], j: u32| -> (bool, f64) {
        let w = 1i64 << j;
        let mut lo = [0i64; 2];
        let mut hi = [1i64; 2];
        let mut outside = false;
        for a in 0..dim {
            lo[a] = start[a].max(0);
            hi[a] = (start[a] + w).min(n as i64);
            if start[a] < 0 || start[a] + w > n as i64 {
                outside = true;
            }
            if lo[a] >= hi[a] {
                return (false, 0.0);
            }
        }
        let mut has_omega = false;
        let mut dmin = f64::INFINITY;
        for i1 in lo[1]..hi[1] {
            for i0 in lo[0]..hi[0] {
                let c = if dim == 1 { i0 as usize } else { i0 as usize + n * i1 as usize };
                if omega.get(c) {
                    has_omega = true;
                }
                dmin = dmin.min(dist_sq[c]);
            }
            if dim == 1 {
                break;
            }
        }
        if outside {
            dmin = 0.0;
        }
        (has_omega, dmin)
    };

    let jtop = n.trailing_zeros() + 1;
    let mut stack = vec![Frame { start: [0, 0], j: jtop }];
    // offset-start blocks are aligned, the whole extent is one block at jtop-1
    while let Some(f) = stack.pop() {
        let (has_omega, dmin_sq) = block_stats(f.start, f.j);
        if !has_omega {
            continue;
        }
        let side_cells = 1i64 << f.j;
        let diam = dsqrt * side_cells as f64 * h;
        let dist = dist_sq_to_len(dmin_sq, h);
        if dist >= 5.0 * diam || f.j == 0 {
            let cube = cube_from_cells(grid, f.start, f.j)?;
            fam.cubes.push(cube);
            fam.distances.push(dist);
        } else {
            let half = side_cells / 2;
            for b1 in 0..=(if dim == 2 { 1 } else { 0 }) {
                for b0 in 0..=1i64 {
                    stack.push(Frame {
                        start: [f.start[0] + b0 * half, f.start[1] + b1 as i64 * half],
                        j: f.j - 1,
                    });
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..fam.cubes.len()).collect();
    order.sort_by_key(|&i| fam.cubes[i]);
    fam.cubes = order.iter().map(|&i| fam.cubes[i]).collect();
    fam.distances = order.iter().map(|&i| fam.distances[i]).collect();
    Ok(fam)
}

fn dist_sq_to_len(dsq: f64, h: f64) -> f64 {
    if dsq.is_infinite() {
        f64::INFINITY
    } else {
        dsq.sqrt() * h
    }
}

impl WhitneyFamily {
    /// Exhaustive check of the decomposition invariants.
    pub fn verify(&self) -> WhitneyReport {
        let grid = &self.grid;
        let h = grid.h();
        let mut report = WhitneyReport {
            cubes: self.cubes.len(),
            ..WhitneyReport::default()
        };
        let mut covered = CellMask::empty(grid.cells());
        let mut disjoint = true;
        for (q, &dist) in self.cubes.iter().zip(&self.distances) {
            let cells = q.geom().cells_in_extent(grid);
            for &c in &cells {
                if covered.get(c) {
                    disjoint = false;
                }
                covered.set(c);
            }
            let diam = q.geom().diameter();
            let single_cell = q.side() <= h * 1.0000001;
            if dist < 5.0 * diam - 1e-12 {
                if single_cell {
                    report.single_cell_exempt += 1;
                } else {
                    report.lower_violations += 1;
                }
            }
            if dist > 12.0 * diam + 1e-12 {
                report.upper_violations += 1;
            }
        }
        report.disjoint = disjoint;
        report.union_exact = covered == self.omega;
        report
    }

    /// Level `L(W) = log2(side)` of a member cube.
    pub fn level(&self, idx: usize) -> i32 {
        -self.cubes[idx].k
    }
}
