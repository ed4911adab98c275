//! Discrete function spaces on uniform grids.
//!
//! A [`GridFunction`] samples a (possibly vector-valued) function at the cell
//! anchors `x_i = -L + i h` of a uniform grid over `[-L, L]^d`, `h = 2L/n`.
//! Each sample stands for the half-open cell `[x_i, x_i + h)^d`; sets are
//! measured by counting cells, so indicator masses and set identities are
//! exact. Functions are zero-extended outside the extent; every periodic
//! operation checks its padding and fails loudly instead of wrapping around.

use crate::{fft, seq, Error, Result};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

/// Uniform grid over `[-L, L]^d` with `n` cells per axis (`n` a power of two).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dim: usize,
    pub n: usize,
    pub half_extent: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, half_extent: f64) -> Result<Grid> {
        if !(dim == 1 || dim == 2) {
            return Err(Error::BadParameter(format!("dim must be 1 or 2, got {dim}")));
        }
        if !n.is_power_of_two() {
            return Err(Error::BadParameter(format!("n must be a power of two, got {n}")));
        }
        if !(half_extent > 0.0 && half_extent.is_finite()) {
            return Err(Error::BadParameter("half extent must be positive".into()));
        }
        Ok(Grid { dim, n, half_extent })
    }

    /// Cell side `h = 2L/n`.
    pub fn h(&self) -> f64 {
        2.0 * self.half_extent / self.n as f64
    }

    /// Total number of cells `n^d`.
    pub fn cells(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    /// Cell measure `h^d`.
    pub fn cell_measure(&self) -> f64 {
        self.h().powi(self.dim as i32)
    }

    /// Coordinate of the axis index `i` (may lie outside the extent).
    pub fn coord(&self, i: i64) -> f64 {
        i as f64 * self.h() - self.half_extent
    }

    /// Flat index of a multi-index (axis 0 fastest).
    pub fn index(&self, multi: [usize; 2]) -> usize {
        match self.dim {
            1 => multi[0],
            _ => multi[0] + self.n * multi[1],
        }
    }

    pub fn multi(&self, idx: usize) -> [usize; 2] {
        match self.dim {
            1 => [idx, 0],
            _ => [idx % self.n, idx / self.n],
        }
    }

    /// Sample point (cell anchor) of a flat index.
    pub fn point(&self, idx: usize) -> [f64; 2] {
        let m = self.multi(idx);
        [self.coord(m[0] as i64), if self.dim == 2 { self.coord(m[1] as i64) } else { 0.0 }]
    }

    /// Euclidean norm of the sample point.
    pub fn point_radius(&self, idx: usize) -> f64 {
        let p = self.point(idx);
        (p[0] * p[0] + p[1] * p[1]).sqrt()
    }

    /// Frequency (in the convention `f^(xi) = ∫ e^{-i<y,xi>} f(y) dy`) of a
    /// DFT bin index along one axis.
    pub fn freq(&self, k: usize) -> f64 {
        let n = self.n as i64;
        let k = k as i64;
        let signed = if k < n / 2 { k } else { k - n };
        signed as f64 * std::f64::consts::PI / self.half_extent
    }

    /// Frequency vector of a flat spectral index.
    pub fn freq_point(&self, idx: usize) -> [f64; 2] {
        let m = self.multi(idx);
        [self.freq(m[0]), if self.dim == 2 { self.freq(m[1]) } else { 0.0 }]
    }

    pub fn nyquist(&self) -> f64 {
        self.n as f64 / 2.0 * std::f64::consts::PI / self.half_extent
    }
}

/// Axis-aligned half-open cube `[corner, corner + side)^d`, the common
/// geometric currency between grid functions and dyadic cubes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CubeGeom {
    pub dim: usize,
    pub corner: [f64; 2],
    pub side: f64,
}

impl CubeGeom {
    pub fn new(dim: usize, corner: [f64; 2], side: f64) -> CubeGeom {
        CubeGeom { dim, corner, side }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        (0..self.dim).all(|a| self.corner[a] <= p[a] && p[a] < self.corner[a] + self.side)
    }

    /// Concentric dilate `tau Q` (`tau = 3` gives the triple `3Q`).
    pub fn dilate(&self, tau: f64) -> CubeGeom {
        let mut corner = self.corner;
        for a in 0..self.dim {
            corner[a] = self.corner[a] + self.side * (1.0 - tau) / 2.0;
        }
        CubeGeom { dim: self.dim, corner, side: self.side * tau }
    }

    /// Index range `[lo, hi)` of grid anchors inside the cube along `axis`,
    /// over the infinite grid (indices may fall outside `[0, n)`).
    pub fn axis_range(&self, grid: &Grid, axis: usize) -> (i64, i64) {
        let h = grid.h();
        let lo = ((self.corner[axis] + grid.half_extent) / h).ceil() as i64;
        let hi = ((self.corner[axis] + self.side + grid.half_extent) / h).ceil() as i64;
        (lo, hi.max(lo))
    }

    /// Number of grid cells of the infinite grid inside the cube.
    pub fn cell_count(&self, grid: &Grid) -> u64 {
        let mut count = 1u64;
        for a in 0..self.dim {
            let (lo, hi) = self.axis_range(grid, a);
            count *= (hi - lo) as u64;
        }
        count
    }

    /// Cell-counting measure `h^d * #cells`.
    pub fn measure(&self, grid: &Grid) -> f64 {
        self.cell_count(grid) as f64 * grid.cell_measure()
    }

    /// Iterate the flat indices of in-extent cells inside the cube.
    pub fn cells_in_extent(&self, grid: &Grid) -> Vec<usize> {
        let mut ranges = [(0i64, 0i64); 2];
        for a in 0..self.dim {
            let (lo, hi) = self.axis_range(grid, a);
            ranges[a] = (lo.max(0), hi.min(grid.n as i64));
            if ranges[a].0 >= ranges[a].1 {
                return Vec::new();
            }
        }
        match self.dim {
            1 => (ranges[0].0..ranges[0].1).map(|i| i as usize).collect(),
            _ => {
                let mut out =
                    Vec::with_capacity(((ranges[0].1 - ranges[0].0) * (ranges[1].1 - ranges[1].0)) as usize);
                for i1 in ranges[1].0..ranges[1].1 {
                    for i0 in ranges[0].0..ranges[0].1 {
                        out.push(i0 as usize + grid.n * i1 as usize);
                    }
                }
                out
            }
        }
    }

    /// Euclidean distance between two cubes (0 if they touch or overlap).
    pub fn distance(&self, other: &CubeGeom) -> f64 {
        let mut s = 0.0;
        for a in 0..self.dim {
            let gap = (self.corner[a] - (other.corner[a] + other.side))
                .max(other.corner[a] - (self.corner[a] + self.side))
                .max(0.0);
            s += gap * gap;
        }
        s.sqrt()
    }

    pub fn diameter(&self) -> f64 {
        self.side * (self.dim as f64).sqrt()
    }

    pub fn contains_cube(&self, other: &CubeGeom) -> bool {
        (0..self.dim).all(|a| {
            self.corner[a] <= other.corner[a] + 1e-12 * self.side
                && other.corner[a] + other.side <= self.corner[a] + self.side + 1e-12 * self.side
        })
    }
}

/// Norm used on the value space `C^M` of a sample.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum ValueNorm {
    /// Euclidean norm (the default; for `M = 1` this is `|z|`).
    Euclid,
    /// `l^r` norm over the components, `r >= 1`.
    Lp(f64),
    /// Sup norm over the components.
    Sup,
    /// r-variation norm of the component sequence.
    Vr(f64),
}

/// A sampled function on a [`Grid`] with values in `C^M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: Grid,
    pub value_dim: usize,
    pub value_norm: ValueNorm,
    /// `cells * value_dim` samples, component-major per cell.
    pub values: Vec<Complex64>,
}

/// Lebesgue exponent in `(1, inf)` with its dual.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Exponent {
    p: f64,
    dual: f64,
}

impl Exponent {
    pub fn new(p: f64) -> Result<Exponent> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(Error::BadParameter(format!("exponent must lie in (1, inf), got {p}")));
        }
        Ok(Exponent { p, dual: p / (p - 1.0) })
    }

    pub fn get(&self) -> f64 {
        self.p
    }

    /// Dual exponent `p' = p/(p-1)`, so `1/p + 1/p' = 1`.
    pub fn dual(&self) -> f64 {
        self.dual
    }
}

impl GridFunction {
    pub fn zeros(grid: Grid, value_dim: usize) -> GridFunction {
        GridFunction {
            grid,
            value_dim,
            value_norm: ValueNorm::Euclid,
            values: vec![Complex64::default(); grid.cells() * value_dim],
        }
    }

    /// Scalar function sampled from a closure of the space variable.
    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> Complex64) -> GridFunction {
        let mut g = GridFunction::zeros(grid, 1);
        for c in 0..grid.cells() {
            g.values[c] = f(grid.point(c));
        }
        g
    }

    pub fn from_real_fn(grid: Grid, f: impl Fn([f64; 2]) -> f64) -> GridFunction {
        GridFunction::from_fn(grid, |p| Complex64::new(f(p), 0.0))
    }

    /// Indicator of a cube (mass = cell-count measure).
    pub fn indicator(grid: Grid, cube: &CubeGeom) -> GridFunction {
        let mut g = GridFunction::zeros(grid, 1);
        for c in cube.cells_in_extent(&grid) {
            g.values[c] = Complex64::new(1.0, 0.0);
        }
        g
    }

    /// Nonnegative random test function: a few random bumps plus noise on a
    /// random subset of cells.
    pub fn random_nonneg(grid: Grid, rng: &mut impl Rng) -> GridFunction {
        let mut g = GridFunction::zeros(grid, 1);
        let l = grid.half_extent;
        let bumps = rng.random_range(1..=4usize);
        for _ in 0..bumps {
            let cx = rng.random_range(-l * 0.8..l * 0.8);
            let cy = if grid.dim == 2 { rng.random_range(-l * 0.8..l * 0.8) } else { 0.0 };
            let w = rng.random_range(l * 0.01..l * 0.3);
            let amp = rng.random_range(0.1..3.0);
            for c in 0..grid.cells() {
                let p = grid.point(c);
                let r2 = (p[0] - cx).powi(2) + (p[1] - cy).powi(2);
                g.values[c] += Complex64::new(amp * (-r2 / (2.0 * w * w)).exp(), 0.0);
            }
        }
        for c in 0..grid.cells() {
            if rng.random_range(0.0..1.0) < 0.02 {
                g.values[c] += Complex64::new(rng.random_range(0.0..2.0), 0.0);
            }
        }
        g
    }

    /// Random complex function supported in a centered cube of the given side.
    pub fn random_complex_in(grid: Grid, side: f64, rng: &mut impl Rng) -> GridFunction {
        let cube = CubeGeom::new(grid.dim, [-side / 2.0; 2], side);
        let mut g = GridFunction::zeros(grid, 1);
        for c in cube.cells_in_extent(&grid) {
            g.values[c] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        g
    }

    pub fn component(&self, m: usize) -> GridFunction {
        let mut g = GridFunction::zeros(self.grid, 1);
        for c in 0..self.grid.cells() {
            g.values[c] = self.values[c * self.value_dim + m];
        }
        g
    }

    pub fn value(&self, cell: usize) -> &[Complex64] {
        &self.values[cell * self.value_dim..(cell + 1) * self.value_dim]
    }

    /// Amplitude `|f(x)|_B` of a sample under the declared value norm.
    pub fn amplitude(&self, cell: usize) -> f64 {
        let v = self.value(cell);
        match self.value_norm {
            ValueNorm::Euclid => v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt(),
            ValueNorm::Lp(r) => v.iter().map(|z| z.norm().powf(r)).sum::<f64>().powf(1.0 / r),
            ValueNorm::Sup => v.iter().map(|z| z.norm()).fold(0.0, f64::max),
            ValueNorm::Vr(r) => seq::vr_norm_by(v, r, |z| z.norm(), |a, b| (a - b).norm()),
        }
    }

    pub fn amplitudes(&self) -> Vec<f64> {
        (0..self.grid.cells()).map(|c| self.amplitude(c)).collect()
    }

    /// Support bounds `[lo, hi]` of nonzero cells per axis; `None` if `f = 0`.
    pub fn support_box(&self) -> Option<[(usize, usize); 2]> {
        let mut out = [(usize::MAX, 0usize); 2];
        let mut any = false;
        for c in 0..self.grid.cells() {
            if self.value(c).iter().any(|z| z.norm_sqr() > 0.0) {
                any = true;
                let m = self.grid.multi(c);
                for a in 0..self.grid.dim {
                    out[a].0 = out[a].0.min(m[a]);
                    out[a].1 = out[a].1.max(m[a]);
                }
            }
        }
        if !any {
            return None;
        }
        if self.grid.dim == 1 {
            out[1] = (0, 0);
        }
        Some(out)
    }

    /// Largest sample-point radius over the support (0 for the zero function).
    pub fn support_radius(&self) -> f64 {
        (0..self.grid.cells())
            .filter(|&c| self.value(c).iter().any(|z| z.norm_sqr() > 0.0))
            .map(|c| self.grid.point_radius(c))
            .fold(0.0, f64::max)
    }

    pub fn scale(&self, a: Complex64) -> GridFunction {
        let mut g = self.clone();
        for v in &mut g.values {
            *v *= a;
        }
        g
    }

    pub fn add(&self, other: &GridFunction) -> Result<GridFunction> {
        if self.grid != other.grid || self.value_dim != other.value_dim {
            return Err(Error::GridMismatch);
        }
        let mut g = self.clone();
        for (v, w) in g.values.iter_mut().zip(&other.values) {
            *v += w;
        }
        Ok(g)
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.add(&other.scale(Complex64::new(-1.0, 0.0)))
    }

    /// Pointwise restriction to a cell mask (mask length = cells).
    pub fn restrict_cells(&self, keep: impl Fn(usize) -> bool) -> GridFunction {
        let mut g = self.clone();
        for c in 0..self.grid.cells() {
            if !keep(c) {
                for m in 0..self.value_dim {
                    g.values[c * self.value_dim + m] = Complex64::default();
                }
            }
        }
        g
    }

    // ------------------------------------------------------------------
    // Norms
    // ------------------------------------------------------------------

    /// `(sum |f(x)|^p h^d)^{1/p}`; `p = inf` gives the max amplitude.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return (0..self.grid.cells()).map(|c| self.amplitude(c)).fold(0.0, f64::max);
        }
        let hm = self.grid.cell_measure();
        let s: f64 = (0..self.grid.cells()).map(|c| self.amplitude(c).powf(p)).sum();
        (s * hm).powf(1.0 / p)
    }

    /// Weak `L^p` quasi-norm `sup_t t^{1/p} f^*(t)` over the grid measure.
    pub fn lorentz_weak_norm(&self, p: f64) -> f64 {
        let mut amps = self.amplitudes();
        amps.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let hm = self.grid.cell_measure();
        amps.iter()
            .enumerate()
            .map(|(k, v)| v * (((k + 1) as f64) * hm).powf(1.0 / p))
            .fold(0.0, f64::max)
    }

    /// `L^{q,1}` norm: exact integral `∫ t^{1/q - 1} f^*(t) dt` of the
    /// piecewise-constant decreasing rearrangement.
    pub fn lorentz_q1_norm(&self, q: f64) -> f64 {
        let mut amps = self.amplitudes();
        amps.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let hm = self.grid.cell_measure();
        let mut out = 0.0;
        for (k, v) in amps.iter().enumerate() {
            if *v == 0.0 {
                break;
            }
            let t0 = k as f64 * hm;
            let t1 = (k + 1) as f64 * hm;
            out += v * q * (t1.powf(1.0 / q) - t0.powf(1.0 / q));
        }
        out
    }

    /// Normalized local average `<f>_{Q,p} = (|Q|^{-1} ∫_Q |f|^p)^{1/p}`.
    /// The cube is measured over the infinite grid (zero extension).
    pub fn local_average(&self, cube: &CubeGeom, p: f64) -> Result<f64> {
        let cells = cube.cells_in_extent(&self.grid);
        if cells.is_empty() {
            return Err(Error::EmptyCube);
        }
        if p.is_infinite() {
            return Ok(cells.iter().map(|&c| self.amplitude(c)).fold(0.0, f64::max));
        }
        let measure = cube.measure(&self.grid);
        let s: f64 = cells.iter().map(|&c| self.amplitude(c).powf(p)).sum();
        Ok((s * self.grid.cell_measure() / measure).powf(1.0 / p))
    }

    /// `∫_Q |f|^p` over in-extent cells.
    pub fn integral_p(&self, cube: &CubeGeom, p: f64) -> f64 {
        let s: f64 = cube
            .cells_in_extent(&self.grid)
            .iter()
            .map(|&c| self.amplitude(c).powf(p))
            .sum();
        s * self.grid.cell_measure()
    }

    /// Complex pairing `∫ <f(x), g(x)> dx` (components paired conjugate-linearly
    /// in `g`).
    pub fn pair(&self, other: &GridFunction) -> Result<Complex64> {
        if self.grid != other.grid || self.value_dim != other.value_dim {
            return Err(Error::GridMismatch);
        }
        let mut s = Complex64::default();
        for (v, w) in self.values.iter().zip(&other.values) {
            s += v * w.conj();
        }
        Ok(s * self.grid.cell_measure())
    }

    // ------------------------------------------------------------------
    // Maximal function
    // ------------------------------------------------------------------

    /// Shifted-lattice Hardy–Littlewood maximal function
    /// `M_p f = (M |f|^p)^{1/p}`: at each cell, the max of `<|f|^p>_Q` over
    /// the admitted cubes — the dyadic cubes of the `3^d` third-shifted
    /// lattices lying inside the working extent (see [`lattice_block`]).
    /// Cubes have whole-cell sides, so all measures are exact cell counts.
    pub fn hl_maximal(&self, p: f64) -> GridFunction {
        let grid = self.grid;
        let n = grid.n;
        let amp_p: Vec<f64> = (0..grid.cells()).map(|c| self.amplitude(c).powf(p)).collect();
        let mut out = vec![0.0f64; grid.cells()];
        let jmax = n.trailing_zeros() + 2;
        match grid.dim {
            1 => {
                let mut prefix = vec![0.0f64; n + 1];
                for i in 0..n {
                    prefix[i + 1] = prefix[i] + amp_p[i];
                }
                let blocksum = |lo: i64, hi: i64| -> f64 {
                    let lo = lo.clamp(0, n as i64) as usize;
                    let hi = hi.clamp(0, n as i64) as usize;
                    if hi <= lo {
                        0.0
                    } else {
                        prefix[hi] - prefix[lo]
                    }
                };
                for nu in 0..3u8 {
                    for j in 0..=jmax {
                        let w = 1i64 << j;
                        for i in 0..n {
                            let (lo, _) = lattice_block(n, nu, j, i);
                            if lo < 0 || lo + w > n as i64 {
                                continue; // admitted cubes lie inside the extent
                            }
                            let avg = blocksum(lo, lo + w) / w as f64;
                            if avg > out[i] {
                                out[i] = avg;
                            }
                        }
                    }
                }
            }
            _ => {
                // summed-area table
                let mut sat = vec![0.0f64; (n + 1) * (n + 1)];
                for i1 in 0..n {
                    for i0 in 0..n {
                        sat[(i1 + 1) * (n + 1) + (i0 + 1)] = amp_p[i0 + n * i1]
                            + sat[i1 * (n + 1) + (i0 + 1)]
                            + sat[(i1 + 1) * (n + 1) + i0]
                            - sat[i1 * (n + 1) + i0];
                    }
                }
                let boxsum = |lo0: i64, hi0: i64, lo1: i64, hi1: i64| -> f64 {
                    let lo0 = lo0.clamp(0, n as i64) as usize;
                    let hi0 = hi0.clamp(0, n as i64) as usize;
                    let lo1 = lo1.clamp(0, n as i64) as usize;
                    let hi1 = hi1.clamp(0, n as i64) as usize;
                    if hi0 <= lo0 || hi1 <= lo1 {
                        return 0.0;
                    }
                    sat[hi1 * (n + 1) + hi0] - sat[lo1 * (n + 1) + hi0] - sat[hi1 * (n + 1) + lo0]
                        + sat[lo1 * (n + 1) + lo0]
                };
                for nu0 in 0..3u8 {
                    for nu1 in 0..3u8 {
                        for j in 0..=jmax {
                            let w = 1i64 << j;
                            let area = (w * w) as f64;
                            for i1 in 0..n {
                                let (lo1, _) = lattice_block(n, nu1, j, i1);
                                if lo1 < 0 || lo1 + w > n as i64 {
                                    continue;
                                }
                                for i0 in 0..n {
                                    let (lo0, _) = lattice_block(n, nu0, j, i0);
                                    if lo0 < 0 || lo0 + w > n as i64 {
                                        continue;
                                    }
                                    let avg = boxsum(lo0, lo0 + w, lo1, lo1 + w) / area;
                                    let c = i0 + n * i1;
                                    if avg > out[c] {
                                        out[c] = avg;
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let mut g = GridFunction::zeros(grid, 1);
        for c in 0..grid.cells() {
            g.values[c] = Complex64::new(out[c].powf(1.0 / p), 0.0);
        }
        g
    }

    // ------------------------------------------------------------------
    // Convolution and differences
    // ------------------------------------------------------------------

    /// Discrete convolution `(f * k)(x) = h^d sum_y f(y) k(x - y)` via FFT.
    ///
    /// The kernel is a scalar grid function on the same grid, read as a
    /// function of the offset (its sample at the center index is the value at
    /// 0). Errors with [`Error::Wraparound`] if the supports are too large
    /// for the periodic transform to agree with the zero-extended result.
    pub fn convolve(&self, kernel: &GridFunction) -> Result<GridFunction> {
        if self.grid != kernel.grid {
            return Err(Error::GridMismatch);
        }
        if kernel.value_dim != 1 {
            return Err(Error::BadParameter("kernel must be scalar".into()));
        }
        let grid = self.grid;
        let n = grid.n as i64;
        let center = n / 2;
        let mut result_box = [(0i64, 0i64); 2];
        if let (Some(fbox), Some(kbox)) = (self.support_box(), kernel.support_box()) {
            for a in 0..grid.dim {
                let lo = fbox[a].0 as i64 + kbox[a].0 as i64 - center;
                let hi = fbox[a].1 as i64 + kbox[a].1 as i64 - center;
                if lo < 0 || hi >= n {
                    return Err(Error::Wraparound);
                }
                result_box[a] = (lo, hi);
            }
        } else {
            return Ok(GridFunction {
                value_norm: self.value_norm,
                ..GridFunction::zeros(grid, self.value_dim)
            });
        }
        let spec_k = kernel_spectrum(kernel);
        let mut out = self.clone();
        let cells = grid.cells();
        let norm = 1.0 / cells as f64 * grid.cell_measure();
        for m in 0..self.value_dim {
            let mut buf: Vec<Complex64> = (0..cells).map(|c| self.values[c * self.value_dim + m]).collect();
            fft::fft_nd(&mut buf, grid.dim, grid.n, false);
            for (b, k) in buf.iter_mut().zip(&spec_k) {
                *b *= k * norm;
            }
            fft::fft_nd(&mut buf, grid.dim, grid.n, true);
            for c in 0..cells {
                out.values[c * self.value_dim + m] = buf[c];
            }
        }
        // the exact result vanishes outside the support sum; remove transform
        // roundoff there so supports stay exact under chained convolutions
        for c in 0..cells {
            let mi = grid.multi(c);
            let outside = (0..grid.dim)
                .any(|a| (mi[a] as i64) < result_box[a].0 || (mi[a] as i64) > result_box[a].1);
            if outside {
                for m in 0..self.value_dim {
                    out.values[c * self.value_dim + m] = Complex64::default();
                }
            }
        }
        Ok(out)
    }

    /// Periodic convolution without support guards. The result wraps around;
    /// callers use it where only approximate directions are needed (gradient
    /// steps, adjoint probes) or where the torus model is intended.
    pub fn convolve_periodic(&self, kernel: &GridFunction) -> Result<GridFunction> {
        if self.grid != kernel.grid {
            return Err(Error::GridMismatch);
        }
        if kernel.value_dim != 1 {
            return Err(Error::BadParameter("kernel must be scalar".into()));
        }
        let grid = self.grid;
        let spec_k = kernel_spectrum(kernel);
        let mut out = self.clone();
        let cells = grid.cells();
        let norm = 1.0 / cells as f64 * grid.cell_measure();
        for m in 0..self.value_dim {
            let mut buf: Vec<Complex64> =
                (0..cells).map(|c| self.values[c * self.value_dim + m]).collect();
            fft::fft_nd(&mut buf, grid.dim, grid.n, false);
            for (b, k) in buf.iter_mut().zip(&spec_k) {
                *b *= k * norm;
            }
            fft::fft_nd(&mut buf, grid.dim, grid.n, true);
            for c in 0..cells {
                out.values[c * self.value_dim + m] = buf[c];
            }
        }
        Ok(out)
    }

    /// Shifted difference `Δ_h f(x) = f(x + h) - f(x)` with zero extension;
    /// the offset is given in whole cells per axis.
    pub fn delta_cells(&self, offset: [i64; 2]) -> GridFunction {
        let grid = self.grid;
        let n = grid.n as i64;
        let mut g = GridFunction {
            value_norm: self.value_norm,
            ..GridFunction::zeros(grid, self.value_dim)
        };
        for c in 0..grid.cells() {
            let m = grid.multi(c);
            let mut src = [m[0] as i64 + offset[0], m[1] as i64 + offset[1]];
            if grid.dim == 1 {
                src[1] = 0;
            }
            let inside = (0..grid.dim).all(|a| src[a] >= 0 && src[a] < n);
            for cm in 0..self.value_dim {
                let shifted = if inside {
                    let sc = grid.index([src[0] as usize, src[1] as usize]);
                    self.values[sc * self.value_dim + cm]
                } else {
                    Complex64::default()
                };
                g.values[c * self.value_dim + cm] = shifted - self.values[c * self.value_dim + cm];
            }
        }
        g
    }

    /// `Δ_h` for a real offset vector, which must be grid-aligned.
    pub fn delta_h(&self, h: [f64; 2]) -> Result<GridFunction> {
        Ok(self.delta_cells(self.offset_cells(h)?))
    }

    /// Iterated difference `Δ_h^M`.
    pub fn delta_h_iter(&self, h: [f64; 2], m: usize) -> Result<GridFunction> {
        let off = self.offset_cells(h)?;
        let mut g = self.clone();
        for _ in 0..m {
            g = g.delta_cells(off);
        }
        Ok(g)
    }

    fn offset_cells(&self, h: [f64; 2]) -> Result<[i64; 2]> {
        let hs = self.grid.h();
        let mut off = [0i64; 2];
        for a in 0..self.grid.dim {
            let r = h[a] / hs;
            if (r - r.round()).abs() > 1e-9 {
                return Err(Error::NotGridAligned);
            }
            off[a] = r.round() as i64;
        }
        Ok(off)
    }

    // ------------------------------------------------------------------
    // Serialization
    // ------------------------------------------------------------------

    /// Flat binary container: magic, dim, n, L, M, value-norm tag, payload of
    /// little-endian f64 (re, im) pairs.
    pub fn write_binary(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(b"SDGF")?;
        w.write_all(&1u32.to_le_bytes())?;
        w.write_all(&(self.grid.dim as u32).to_le_bytes())?;
        w.write_all(&(self.grid.n as u64).to_le_bytes())?;
        w.write_all(&self.grid.half_extent.to_le_bytes())?;
        w.write_all(&(self.value_dim as u64).to_le_bytes())?;
        let (tag, param): (u32, f64) = match self.value_norm {
            ValueNorm::Euclid => (0, 0.0),
            ValueNorm::Lp(r) => (1, r),
            ValueNorm::Sup => (2, 0.0),
            ValueNorm::Vr(r) => (3, r),
        };
        w.write_all(&tag.to_le_bytes())?;
        w.write_all(&param.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(r: &mut impl Read) -> Result<GridFunction> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"SDGF" {
            return Err(Error::BadParameter("bad magic in grid container".into()));
        }
        let mut u32b = [0u8; 4];
        let mut u64b = [0u8; 8];
        r.read_exact(&mut u32b)?; // version
        r.read_exact(&mut u32b)?;
        let dim = u32::from_le_bytes(u32b) as usize;
        r.read_exact(&mut u64b)?;
        let n = u64::from_le_bytes(u64b) as usize;
        r.read_exact(&mut u64b)?;
        let half_extent = f64::from_le_bytes(u64b);
        r.read_exact(&mut u64b)?;
        let value_dim = u64::from_le_bytes(u64b) as usize;
        r.read_exact(&mut u32b)?;
        let tag = u32::from_le_bytes(u32b);
        r.read_exact(&mut u64b)?;
        let param = f64::from_le_bytes(u64b);
        let value_norm = match tag {
            0 => ValueNorm::Euclid,
            1 => ValueNorm::Lp(param),
            2 => ValueNorm::Sup,
            _ => ValueNorm::Vr(param),
        };
        let grid = Grid::new(dim, n, half_extent)?;
        let mut values = Vec::with_capacity(grid.cells() * value_dim);
        for _ in 0..grid.cells() * value_dim {
            r.read_exact(&mut u64b)?;
            let re = f64::from_le_bytes(u64b);
            r.read_exact(&mut u64b)?;
            let im = f64::from_le_bytes(u64b);
            values.push(Complex64::new(re, im));
        }
        Ok(GridFunction { grid, value_dim, value_norm, values })
    }

    pub fn write_csv(&self, w: &mut impl Write) -> Result<()> {
        if self.grid.dim == 1 {
            writeln!(w, "x,comp,re,im")?;
        } else {
            writeln!(w, "x,y,comp,re,im")?;
        }
        for c in 0..self.grid.cells() {
            let p = self.grid.point(c);
            for m in 0..self.value_dim {
                let v = self.values[c * self.value_dim + m];
                if self.grid.dim == 1 {
                    writeln!(w, "{:.17e},{},{:.17e},{:.17e}", p[0], m, v.re, v.im)?;
                } else {
                    writeln!(w, "{:.17e},{:.17e},{},{:.17e},{:.17e}", p[0], p[1], m, v.re, v.im)?;
                }
            }
        }
        Ok(())
    }
}

/// Per-axis third-shift residue of lattice `nu` at block level `j`: cube
/// corners sit at `(m + r/3) * side` relative to the extent center. `nu = 0`
/// is the plain lattice; `nu = 1, 2` alternate their thirds with the level
/// parity, which makes each lattice closed under dyadic children.
pub fn lattice_residue(nu: u8, j: u32) -> i64 {
    match (nu, j % 2) {
        (0, _) => 0,
        (1, 0) => 2,
        (1, _) => 1,
        (2, 0) => 1,
        _ => 2,
    }
}

/// The level-`j` block (side `2^j` cells) of lattice `nu` containing axis
/// cell `i`: returns `(first_cell, block_index)`. Blocks partition the axis;
/// every block covers exactly `2^j` cells.
pub fn lattice_block(n: usize, nu: u8, j: u32, i: usize) -> (i64, i64) {
    let w = 1i64 << j;
    let r = lattice_residue(nu, j);
    // block b covers real interval [delta + b w, delta + (b+1) w) of cell
    // indices, delta = n/2 + r w / 3
    let num = 3 * (i as i64 - n as i64 / 2) - r * w;
    let b = num.div_euclid(3 * w);
    let lo = n as i64 / 2 + (b * 3 * w + r * w + 2).div_euclid(3);
    (lo, b)
}

/// Spectrum of a kernel read as a function of the offset (center cell -> 0).
pub fn kernel_spectrum(kernel: &GridFunction) -> Vec<Complex64> {
    let grid = kernel.grid;
    let n = grid.n;
    let cells = grid.cells();
    let mut buf = vec![Complex64::default(); cells];
    for c in 0..cells {
        let m = grid.multi(c);
        let src0 = (m[0] + n / 2) % n;
        let src = if grid.dim == 1 {
            src0
        } else {
            src0 + n * ((m[1] + n / 2) % n)
        };
        buf[c] = kernel.values[src];
    }
    fft::fft_nd(&mut buf, grid.dim, n, false);
    buf
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid1(n: usize, l: f64) -> Grid {
        Grid::new(1, n, l).unwrap()
    }

    #[test]
    fn exponent_duality() {
        for p in [1.1, 1.5, 2.0, 3.0, 7.0] {
            let e = Exponent::new(p).unwrap();
            assert!((1.0 / e.get() + 1.0 / e.dual() - 1.0).abs() < 1e-15);
        }
        assert!(Exponent::new(1.0).is_err());
        assert!(Exponent::new(f64::INFINITY).is_err());
    }

    #[test]
    fn lp_norm_zero_and_indicator() {
        let g = grid1(256, 2.0);
        let z = GridFunction::zeros(g, 1);
        assert_eq!(z.lp_norm(2.0), 0.0);
        let f = GridFunction::indicator(g, &CubeGeom::new(1, [0.0, 0.0], 1.0));
        let h = g.h();
        assert!((f.lp_norm(2.0) - 1.0).abs() <= h, "indicator mass");
        // exact: [0,1) is grid-aligned at n=256, L=2
        assert!((f.lp_norm(2.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn lp_norm_linear_ramp() {
        // f(x) = x on [0,1], ||f||_2 = 1/sqrt(3)
        let g = grid1(4096, 2.0);
        let f = GridFunction::from_real_fn(g, |p| if (0.0..1.0).contains(&p[0]) { p[0] } else { 0.0 });
        let h = g.h();
        assert!((f.lp_norm(2.0) - 1.0 / 3.0f64.sqrt()).abs() < 2.0 * h);
    }

    #[test]
    fn lorentz_indicator() {
        let g = grid1(4096, 2.0);
        let f = GridFunction::indicator(g, &CubeGeom::new(1, [0.0, 0.0], 1.0));
        for p in [1.5, 2.0, 3.0] {
            assert!((f.lorentz_weak_norm(p) - 1.0).abs() < 1e-12);
            // L^{q,1} of an indicator of measure 1 is q
            assert!((f.lorentz_q1_norm(p) - p).abs() / p < 0.03);
        }
        let z = GridFunction::zeros(g, 1);
        assert_eq!(z.lorentz_weak_norm(2.0), 0.0);
        assert_eq!(z.lorentz_q1_norm(2.0), 0.0);
    }

    #[test]
    fn lorentz_sandwich_for_indicators() {
        let g = grid1(1024, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let a = rng.random_range(-1.5..0.5);
            let w = rng.random_range(0.1..1.0);
            let f = GridFunction::indicator(g, &CubeGeom::new(1, [a, 0.0], w));
            for p in [1.25, 2.0, 3.0] {
                let weak = f.lorentz_weak_norm(p);
                let lp = f.lp_norm(p);
                let q1 = f.lorentz_q1_norm(p);
                assert!(weak <= lp * (1.0 + 1e-12));
                assert!(lp <= q1 * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn local_average_constant_and_halves() {
        let g = grid1(512, 2.0);
        let c = Complex64::new(-0.7, 0.4);
        let f = GridFunction::from_fn(g, |_| c);
        let q = CubeGeom::new(1, [-1.0, 0.0], 1.0);
        assert!((f.local_average(&q, 1.0).unwrap() - c.norm()).abs() < 1e-12);
        assert!((f.local_average(&q, 2.5).unwrap() - c.norm()).abs() < 1e-12);

        // indicator of the left half of Q
        let half = GridFunction::indicator(g, &CubeGeom::new(1, [-1.0, 0.0], 0.5));
        let a1 = half.local_average(&q, 1.0).unwrap();
        assert!((a1 - 0.5).abs() <= g.h() / q.side);
        let a2 = half.local_average(&q, 2.0).unwrap();
        assert!((a2 - 0.5f64.sqrt()).abs() <= 1e-6);
    }

    #[test]
    fn local_average_empty_cube_errors() {
        let g = grid1(64, 1.0);
        let f = GridFunction::zeros(g, 1);
        let q = CubeGeom::new(1, [5.0, 0.0], 0.5);
        assert!(matches!(f.local_average(&q, 2.0), Err(Error::EmptyCube)));
    }

    #[test]
    fn local_average_monotone_in_p() {
        let g = grid1(256, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = GridFunction::random_nonneg(g, &mut rng);
        for _ in 0..30 {
            let a = rng.random_range(-2.0..1.0);
            let w = rng.random_range(0.05..1.0);
            let q = CubeGeom::new(1, [a, 0.0], w);
            if q.cells_in_extent(&g).is_empty() {
                continue;
            }
            let mut prev = 0.0;
            for p in [1.0, 1.5, 2.0, 4.0] {
                let v = f.local_average(&q, p).unwrap();
                assert!(v >= prev - 1e-12 * (1.0 + prev));
                prev = v;
            }
        }
    }

    #[test]
    fn hl_maximal_constant() {
        let g = grid1(128, 2.0);
        let f = GridFunction::from_fn(g, |_| Complex64::new(0.0, -1.25));
        let m = f.hl_maximal(1.0);
        for c in 0..g.cells() {
            assert!((m.values[c].re - 1.25).abs() < 1e-12);
        }
    }

    #[test]
    fn hl_maximal_dominates_and_jensen() {
        let g = grid1(256, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let f = GridFunction::random_nonneg(g, &mut rng);
            let m1 = f.hl_maximal(1.0);
            let m2 = f.hl_maximal(2.0);
            for c in 0..g.cells() {
                assert!(m1.values[c].re >= f.amplitude(c) - 1e-12);
                assert!(m2.values[c].re >= m1.values[c].re - 1e-12, "Jensen");
            }
        }
    }

    /// Brute-force oracle over every block of every shifted lattice at n=64:
    /// enumerate admitted cubes geometrically and compare.
    #[test]
    fn hl_maximal_matches_bruteforce() {
        let n = 64usize;
        let g = grid1(n, 2.0);
        let f = GridFunction::indicator(g, &CubeGeom::new(1, [0.0, 0.0], 1.0));
        let m = f.hl_maximal(1.0);
        let amps = f.amplitudes();
        let jmax = n.trailing_zeros() + 2;
        for i in 0..n {
            let mut best = 0.0f64;
            for nu in 0..3u8 {
                for j in 0..=jmax {
                    let w = 1i64 << j;
                    let r = lattice_residue(nu, j);
                    // every admitted block of this level containing cell i
                    for b in -4..4i64 {
                        let lo = n as i64 / 2 + (b * 3 * w + r * w + 2).div_euclid(3);
                        if (i as i64) < lo || (i as i64) >= lo + w || lo < 0 || lo + w > n as i64 {
                            continue;
                        }
                        let sum: f64 = (lo..lo + w).map(|k| amps[k as usize]).sum();
                        best = best.max(sum / w as f64);
                    }
                }
            }
            assert!((m.values[i].re - best).abs() < 1e-12, "cell {i}");
        }
        // value at the right edge is positive (big cubes see the bump)
        assert!(m.values[n - 1].re > 0.0);
        // lattice blocks partition: each cell is in exactly one block per (nu, j)
        for nu in 0..3u8 {
            for j in 0..=jmax {
                let w = 1i64 << j;
                for i in 0..n {
                    let (lo, _) = lattice_block(n, nu, j, i);
                    assert!(lo <= i as i64 && (i as i64) < lo + w);
                }
            }
        }
    }

    #[test]
    fn convolve_delta_identity() {
        let g = grid1(256, 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let f = GridFunction::random_complex_in(g, 1.0, &mut rng);
        // delta kernel: single center cell of mass 1
        let mut k = GridFunction::zeros(g, 1);
        k.values[g.n / 2] = Complex64::new(1.0 / g.h(), 0.0);
        let c = f.convolve(&k).unwrap();
        for i in 0..g.cells() {
            assert!((c.values[i] - f.values[i]).norm() < 1e-12);
        }
    }

    #[test]
    fn convolve_hat_function() {
        let g = grid1(1024, 4.0);
        let ind = GridFunction::indicator(g, &CubeGeom::new(1, [0.0, 0.0], 1.0));
        let c = ind.convolve(&ind).unwrap();
        // 1_[0,1] * 1_[0,1] peaks at x = 1 with value 1
        let peak_idx = (0..g.cells()).max_by(|&a, &b| c.values[a].re.partial_cmp(&c.values[b].re).unwrap()).unwrap();
        assert!((g.point(peak_idx)[0] - 1.0).abs() <= 2.0 * g.h());
        assert!((c.values[peak_idx].re - 1.0).abs() < 2.0 * g.h());
    }

    #[test]
    fn convolve_support_additivity() {
        let g = grid1(512, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let f = GridFunction::random_complex_in(g, 1.0, &mut rng);
            let mut k = GridFunction::zeros(g, 1);
            let halfwidth = rng.random_range(1..20i64);
            for o in -halfwidth..=halfwidth {
                k.values[(g.n as i64 / 2 + o) as usize] = Complex64::new(rng.random_range(-1.0..1.0), 0.0);
            }
            let c = f.convolve(&k).unwrap();
            if let (Some(fb), Some(kb)) = (f.support_box(), k.support_box()) {
                let lo = fb[0].0 as i64 + kb[0].0 as i64 - g.n as i64 / 2;
                let hi = fb[0].1 as i64 + kb[0].1 as i64 - g.n as i64 / 2;
                let peak = c.lp_norm(f64::INFINITY);
                for i in 0..g.cells() {
                    if c.amplitude(i) > 1e-12 * peak {
                        assert!((i as i64) >= lo && (i as i64) <= hi, "spill at {i}");
                    }
                }
            }
        }
    }

    #[test]
    fn convolve_wraparound_detected() {
        let g = grid1(64, 1.0);
        let f = GridFunction::from_fn(g, |_| Complex64::new(1.0, 0.0));
        let k = f.clone();
        assert!(matches!(f.convolve(&k), Err(Error::Wraparound)));
    }

    #[test]
    fn convolve_linearity() {
        let g = grid1(256, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let f = GridFunction::random_complex_in(g, 1.0, &mut rng);
        let gg = GridFunction::random_complex_in(g, 1.0, &mut rng);
        let mut k = GridFunction::zeros(g, 1);
        for o in -5..=5i64 {
            k.values[(g.n as i64 / 2 + o) as usize] = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        let a = Complex64::new(1.3, -0.2);
        let b = Complex64::new(-0.4, 0.9);
        let lhs = f.scale(a).add(&gg.scale(b)).unwrap().convolve(&k).unwrap();
        let rhs = f.convolve(&k).unwrap().scale(a).add(&gg.convolve(&k).unwrap().scale(b)).unwrap();
        let diff = lhs.sub(&rhs).unwrap().lp_norm(2.0);
        let scale = lhs.lp_norm(2.0).max(1e-30);
        assert!(diff / scale < 1e-12);
    }

    #[test]
    fn delta_h_basics() {
        let g = grid1(512, 2.0);
        let c = GridFunction::from_fn(g, |_| Complex64::new(2.0, 1.0));
        let d = c.delta_cells([1, 0]);
        // boundary cell sees 0 - c; interior is exactly 0
        for i in 0..g.cells() - 1 {
            assert_eq!(d.values[i], Complex64::default());
        }
        let lin = GridFunction::from_real_fn(g, |p| p[0]);
        let dl = lin.delta_cells([1, 0]);
        for i in 0..g.cells() - 1 {
            assert!((dl.values[i].re - g.h()).abs() < 1e-12);
        }
        // second difference of x^2 is 2 h0^2 away from the boundary
        let quad = GridFunction::from_real_fn(g, |p| p[0] * p[0]);
        let h0 = 4.0 * g.h();
        let d2 = quad.delta_h_iter([h0, 0.0], 2).unwrap();
        let last_valid = g.cells() - 1 - 8;
        for i in 0..last_valid {
            assert!((d2.values[i].re - 2.0 * h0 * h0).abs() < 1e-9);
        }
        assert!(matches!(lin.delta_h([g.h() * 0.5, 0.0]), Err(Error::NotGridAligned)));
    }

    #[test]
    fn delta_commutes_with_convolution() {
        let g = grid1(256, 4.0);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let f = GridFunction::random_complex_in(g, 0.8, &mut rng);
        let mut k = GridFunction::zeros(g, 1);
        for o in -4..=4i64 {
            k.values[(g.n as i64 / 2 + o) as usize] = Complex64::new(rng.random_range(-1.0..1.0), 0.0);
        }
        let a = f.convolve(&k).unwrap().delta_cells([3, 0]);
        let b = f.delta_cells([3, 0]).convolve(&k).unwrap();
        let diff = a.sub(&b).unwrap().lp_norm(f64::INFINITY);
        assert!(diff < 1e-12);
    }

    #[test]
    fn norm_monotone_under_pointwise_increase() {
        let g = grid1(128, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..100 {
            let f = GridFunction::random_nonneg(g, &mut rng);
            let mut bigger = f.clone();
            for v in &mut bigger.values {
                *v += Complex64::new(rng.random_range(0.0..0.5), 0.0);
            }
            for p in [1.0, 1.7, 3.0] {
                assert!(bigger.lp_norm(p) >= f.lp_norm(p) - 1e-13);
            }
        }
    }

    #[test]
    fn binary_roundtrip() {
        let g = Grid::new(2, 16, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let mut f = GridFunction::zeros(g, 3);
        f.value_norm = ValueNorm::Lp(2.5);
        for v in &mut f.values {
            *v = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let f2 = GridFunction::read_binary(&mut buf.as_slice()).unwrap();
        assert_eq!(f, f2);
    }

    #[test]
    fn cube_cell_count_2d() {
        let g = Grid::new(2, 64, 2.0).unwrap();
        let q = CubeGeom::new(2, [0.0, -1.0], 1.0);
        let per_axis = (1.0 / g.h()) as u64;
        assert_eq!(q.cell_count(&g), per_axis * per_axis);
        // sticking out of the extent still counts the full cube
        let q2 = CubeGeom::new(2, [1.5, 1.5], 1.0);
        assert_eq!(q2.cell_count(&g), per_axis * per_axis);
        assert!(q2.cells_in_extent(&g).len() < q2.cell_count(&g) as usize);
    }
}
