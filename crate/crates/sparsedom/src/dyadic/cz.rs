//! Calderón–Zygmund decomposition driven by the shifted-lattice maximal
//! function, plus dyadic conditional expectations and martingale differences.

use super::whitney::{whitney, WhitneyFamily};
use super::DyadicCube;
use crate::grid::{Exponent, GridFunction};
use crate::mask::CellMask;
use crate::{Error, Result};
use num_complex::Complex64;

/// Shared Calderón–Zygmund decomposition of a pair `(f1, f2)` relative to a
/// root cube: level sets of `M_p f1` and `M_{q'} f2` produce one open set
/// `Omega`, one Whitney family, and for each function a good part and
/// mean-zero bad parts indexed by the Whitney cubes.
#[derive(Clone, Debug)]
pub struct CzDecomposition {
    pub root: DyadicCube,
    pub gamma: f64,
    /// Level thresholds for `M_p f1` and `M_{q'} f2`.
    pub thresholds: [f64; 2],
    pub omega1: CellMask,
    pub omega2: CellMask,
    pub omega: CellMask,
    pub whitney: WhitneyFamily,
    /// `E_{Q_0} = Q_0 \ Omega`.
    pub root_mask: CellMask,
    pub good: [GridFunction; 2],
    /// Per Whitney cube, per component: the mean of `f_i` over the cube.
    whitney_means: [Vec<Vec<Complex64>>; 2],
    inputs: [GridFunction; 2],
}

impl CzDecomposition {
    /// Bad part `b_{i,W} = (f_i - av_W f_i) 1_W` for Whitney cube index `w`.
    pub fn bad_part(&self, i: usize, w: usize) -> GridFunction {
        let f = &self.inputs[i];
        let mut out = GridFunction {
            value_norm: f.value_norm,
            ..GridFunction::zeros(f.grid, f.value_dim)
        };
        let mean = &self.whitney_means[i][w];
        for c in self.whitney.cubes[w].geom().cells_in_extent(&f.grid) {
            for m in 0..f.value_dim {
                out.values[c * f.value_dim + m] = f.values[c * f.value_dim + m] - mean[m];
            }
        }
        out
    }

    /// Total bad part `b_i = sum_W b_{i,W}`.
    pub fn bad_sum(&self, i: usize) -> GridFunction {
        let f = &self.inputs[i];
        let mut out = GridFunction {
            value_norm: f.value_norm,
            ..GridFunction::zeros(f.grid, f.value_dim)
        };
        for (w, cube) in self.whitney.cubes.iter().enumerate() {
            let mean = &self.whitney_means[i][w];
            for c in cube.geom().cells_in_extent(&f.grid) {
                for m in 0..f.value_dim {
                    out.values[c * f.value_dim + m] = f.values[c * f.value_dim + m] - mean[m];
                }
            }
        }
        out
    }

    pub fn whitney_mean(&self, i: usize, w: usize) -> &[Complex64] {
        &self.whitney_means[i][w]
    }
}

/// Calderón–Zygmund decomposition of `(f1, f2)` on `root` at sparseness
/// `gamma`. Thresholds are `(100^d / (1-gamma))^{1/p} <f1>_{Q0,p}` for
/// `M_p f1` and the `q'`-analogue on the triple for `M_{q'} f2`.
pub fn cz_decompose(
    f1: &GridFunction,
    f2: &GridFunction,
    root: &DyadicCube,
    p: Exponent,
    q: Exponent,
    gamma: f64,
) -> Result<CzDecomposition> {
    if f1.grid != f2.grid {
        return Err(Error::GridMismatch);
    }
    let grid = f1.grid;
    let d = grid.dim as f64;
    let qd = q.dual();
    let avg1 = f1.local_average(&root.geom(), p.get()).unwrap_or(0.0);
    let avg2 = f2.local_average(&root.triple_geom(), qd).unwrap_or(0.0);
    let factor = 100.0f64.powf(d) / (1.0 - gamma);
    let thresholds = [factor.powf(1.0 / p.get()) * avg1, factor.powf(1.0 / qd) * avg2];

    let m1 = f1.hl_maximal(p.get());
    let m2 = f2.hl_maximal(qd);
    let cells = grid.cells();
    let mut omega1 = CellMask::empty(cells);
    let mut omega2 = CellMask::empty(cells);
    for c in 0..cells {
        if thresholds[0] > 0.0 && m1.values[c].re > thresholds[0] {
            omega1.set(c);
        }
        if thresholds[1] > 0.0 && m2.values[c].re > thresholds[1] {
            omega2.set(c);
        }
    }
    let mut omega = omega1.clone();
    omega.union_with(&omega2);

    let whitney_fam = if omega.any() {
        whitney(&grid, &omega)?
    } else {
        WhitneyFamily { grid, omega: omega.clone(), cubes: Vec::new(), distances: Vec::new() }
    };

    let mut root_mask = CellMask::from_cube(&grid, &root.geom());
    root_mask.subtract(&omega);

    let mut whitney_means: [Vec<Vec<Complex64>>; 2] = [Vec::new(), Vec::new()];
    let mut good = [f1.clone(), f2.clone()];
    for (i, f) in [f1, f2].into_iter().enumerate() {
        for cube in &whitney_fam.cubes {
            let idxs = cube.geom().cells_in_extent(&grid);
            let mut mean = vec![Complex64::default(); f.value_dim];
            // the mean over W uses the full cube measure (zero extension)
            let count = cube.geom().cell_count(&grid) as f64;
            for &c in &idxs {
                for m in 0..f.value_dim {
                    mean[m] += f.values[c * f.value_dim + m];
                }
            }
            for m in &mut mean {
                *m /= count;
            }
            for &c in &idxs {
                for m in 0..f.value_dim {
                    good[i].values[c * f.value_dim + m] = mean[m];
                }
            }
            whitney_means[i].push(mean);
        }
    }

    Ok(CzDecomposition {
        root: *root,
        gamma,
        thresholds,
        omega1,
        omega2,
        omega,
        whitney: whitney_fam,
        root_mask,
        good,
        whitney_means,
        inputs: [f1.clone(), f2.clone()],
    })
}

/// Conditional expectation onto the plain dyadic tiling of the extent into
/// `2^{nd}` cubes (generation `n >= 0` relative to the extent): cube-wise
/// means. Errors when the tiles would be finer than a grid cell.
pub fn conditional_expectation(f: &GridFunction, n: u32) -> Result<GridFunction> {
    let ncells = f.grid.n;
    let levels = ncells.trailing_zeros();
    if n > levels {
        return Err(Error::BadParameter(format!(
            "generation {n} beyond grid resolution ({levels})"
        )));
    }
    Ok(expectation_block(f, ncells >> n))
}

/// Block-average projection: means over aligned blocks of `block` cells per
/// axis (`block` divides `n`). This is the conditional expectation onto the
/// sigma-algebra of side-`block * h` grid cubes.
pub fn expectation_block(f: &GridFunction, block: usize) -> GridFunction {
    let grid = f.grid;
    let n = grid.n;
    let mut out = f.clone();
    let vd = f.value_dim;
    match grid.dim {
        1 => {
            for start in (0..n).step_by(block) {
                for m in 0..vd {
                    let mut s = Complex64::default();
                    for i in start..start + block {
                        s += f.values[i * vd + m];
                    }
                    s /= block as f64;
                    for i in start..start + block {
                        out.values[i * vd + m] = s;
                    }
                }
            }
        }
        _ => {
            for s1 in (0..n).step_by(block) {
                for s0 in (0..n).step_by(block) {
                    for m in 0..vd {
                        let mut s = Complex64::default();
                        for i1 in s1..s1 + block {
                            for i0 in s0..s0 + block {
                                s += f.values[(i0 + n * i1) * vd + m];
                            }
                        }
                        s /= (block * block) as f64;
                        for i1 in s1..s1 + block {
                            for i0 in s0..s0 + block {
                                out.values[(i0 + n * i1) * vd + m] = s;
                            }
                        }
                    }
                }
            }
        }
    }
    out
}

/// Martingale difference `D_n = E_n - E_{n-1}` (`n >= 1`).
pub fn martingale_difference(f: &GridFunction, n: u32) -> Result<GridFunction> {
    if n == 0 {
        return Err(Error::BadParameter("martingale difference needs n >= 1".into()));
    }
    conditional_expectation(f, n)?.sub(&conditional_expectation(f, n - 1)?)
}
