//! Sparse families, sparse bilinear forms, the maximal-form bracket, the
//! triple-cube form of the domination engine, and the Hardy–Littlewood
//! sparse certificate.

use crate::dyadic::{cell_generation, DyadicCube};
use crate::grid::{lattice_block, lattice_residue, Grid, GridFunction};
use crate::mask::CellMask;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

/// A family of cubes with designated pairwise-disjoint subsets `E_Q` of
/// relative measure at least `gamma`. When `triple` is set, the effective
/// geometry of each member is the concentric triple `3Q` (used for the
/// enlarged families produced by the three-lattice step).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SparseFamily {
    pub grid: Grid,
    pub gamma: f64,
    pub triple: bool,
    pub cubes: Vec<DyadicCube>,
    pub masks: Vec<CellMask>,
    /// Out-of-extent cells of `E_Q` for cubes reaching past the extent
    /// (exact counts from the stopping-set algebra; the function is zero
    /// there, and those regions are disjoint by construction). Empty means
    /// all zeros.
    pub virtual_extra: Vec<u64>,
}

impl SparseFamily {
    pub fn new(grid: Grid, gamma: f64) -> SparseFamily {
        SparseFamily {
            grid,
            gamma,
            triple: false,
            cubes: Vec::new(),
            masks: Vec::new(),
            virtual_extra: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    pub fn effective_geom(&self, i: usize) -> crate::grid::CubeGeom {
        if self.triple {
            self.cubes[i].triple_geom()
        } else {
            self.cubes[i].geom()
        }
    }
}

/// Verification report for the sparse-family invariants.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SparseReport {
    pub cubes: usize,
    /// Indices whose mask leaves the cube.
    pub subset_violations: Vec<usize>,
    /// `(index, |E_Q| / (gamma |Q|))` for cubes below quota.
    pub measure_violations: Vec<(usize, f64)>,
    /// Pairs of members with intersecting masks.
    pub disjointness_violations: Vec<(usize, usize)>,
    /// Smallest `|E_Q| / |Q|` over the family.
    pub min_density: f64,
}

impl SparseReport {
    pub fn ok(&self) -> bool {
        self.subset_violations.is_empty()
            && self.measure_violations.is_empty()
            && self.disjointness_violations.is_empty()
    }
}

/// Checks `E_Q ⊆ Q`, `|E_Q| >= gamma |Q|` (cell counts; `|Q|` over the
/// infinite grid) and pairwise disjointness of the masks.
pub fn verify_sparse(fam: &SparseFamily) -> SparseReport {
    let mut report =
        SparseReport { cubes: fam.len(), min_density: f64::INFINITY, ..Default::default() };
    let mut claimed = CellMask::empty(fam.grid.cells());
    for i in 0..fam.len() {
        let geom = fam.effective_geom(i);
        let cube_mask = CellMask::from_cube(&fam.grid, &geom);
        if !fam.masks[i].is_subset_of(&cube_mask) {
            report.subset_violations.push(i);
        }
        let quota = fam.gamma * geom.cell_count(&fam.grid) as f64;
        let extra = fam.virtual_extra.get(i).copied().unwrap_or(0);
        let got = (fam.masks[i].count() as u64 + extra) as f64;
        report.min_density = report.min_density.min(got / geom.cell_count(&fam.grid) as f64);
        if got + 1e-9 < quota {
            report.measure_violations.push((i, got / quota.max(1e-300)));
        }
        if !fam.masks[i].is_disjoint_from(&claimed) {
            for j in 0..i {
                if !fam.masks[i].is_disjoint_from(&fam.masks[j]) {
                    report.disjointness_violations.push((j, i));
                }
            }
        }
        claimed.union_with(&fam.masks[i]);
    }
    if !report.min_density.is_finite() {
        report.min_density = 1.0;
    }
    report
}

/// Value of a sparse form together with its per-cube contributions.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FormValue {
    pub value: f64,
    pub contributions: Vec<f64>,
}

pub(crate) fn cube_average(f: &GridFunction, geom: &crate::grid::CubeGeom, p: f64) -> f64 {
    let measure = geom.measure(&f.grid);
    if measure == 0.0 {
        return 0.0;
    }
    (f.integral_p(geom, p) / measure).powf(1.0 / p)
}

/// Sparse form `sum_Q |Q| <f1>_{Q,p1} <f2>_{Q,p2}` over the family's
/// effective cubes.
pub fn sparse_form(
    fam: &SparseFamily,
    f1: &GridFunction,
    f2: &GridFunction,
    p1: f64,
    p2: f64,
) -> FormValue {
    let mut contributions = Vec::with_capacity(fam.len());
    for i in 0..fam.len() {
        let geom = fam.effective_geom(i);
        let measure = geom.measure(&fam.grid);
        contributions.push(measure * cube_average(f1, &geom, p1) * cube_average(f2, &geom, p2));
    }
    FormValue { value: contributions.iter().sum(), contributions }
}

/// Triple form `sum_Q |Q| <f1>_{Q,p} <f2>_{3Q,q'}` over cubes of `D(Q0)`.
pub fn triple_form(
    cubes: &[DyadicCube],
    f1: &GridFunction,
    f2: &GridFunction,
    p: f64,
    q_dual: f64,
    root: &DyadicCube,
) -> Result<FormValue> {
    let mut contributions = Vec::with_capacity(cubes.len());
    for q in cubes {
        if !root.contains_cube(q) {
            return Err(Error::BadParameter(format!("cube {q:?} outside D(Q0)")));
        }
        let geom = q.geom();
        let measure = geom.measure(&f1.grid);
        contributions
            .push(measure * cube_average(f1, &geom, p) * cube_average(f2, &q.triple_geom(), q_dual));
    }
    Ok(FormValue { value: contributions.iter().sum(), contributions })
}

/// Upper bound for every sparse form at sparseness `gamma`:
/// `gamma^{-1} ∫ (M|f1|^{p1})^{1/p1} (M|f2|^{p2})^{1/p2}`.
pub fn maximal_form_upper(f1: &GridFunction, f2: &GridFunction, p1: f64, p2: f64, gamma: f64) -> f64 {
    let m1 = f1.hl_maximal(p1);
    let m2 = f2.hl_maximal(p2);
    let mut s = 0.0;
    for c in 0..f1.grid.cells() {
        s += m1.values[c].re * m2.values[c].re;
    }
    s * f1.grid.cell_measure() / gamma
}

/// All admitted cubes the constructive machinery ranges over: the blocks of
/// the `3^d` shifted lattices, at every level, lying inside the extent.
pub fn candidate_cubes(grid: &Grid) -> Result<Vec<DyadicCube>> {
    let k_cell = cell_generation(grid)?;
    let n = grid.n;
    let jmax = n.trailing_zeros();
    let mut out = Vec::new();
    for nu in lattice_nus(grid.dim) {
        for j in 0..=jmax {
            let k = k_cell - j as i32;
            let w = 1i64 << j;
            let mut axis_corners: [Vec<i64>; 2] = [Vec::new(), Vec::new()];
            for a in 0..grid.dim {
                let r = lattice_residue(nu[a], j);
                let (_, b_first) = lattice_block(n, nu[a], j, 0);
                let (_, b_last) = lattice_block(n, nu[a], j, n - 1);
                for b in b_first..=b_last {
                    let lo = n as i64 / 2 + (b * 3 * w + r * w + 2).div_euclid(3);
                    if lo < 0 || lo + w > n as i64 {
                        continue;
                    }
                    axis_corners[a].push(3 * b + r);
                }
            }
            if grid.dim == 1 {
                for &cn in &axis_corners[0] {
                    out.push(DyadicCube { k, corner_num: [cn, 0], dim: 1 });
                }
            } else {
                for &cn1 in &axis_corners[1] {
                    for &cn0 in &axis_corners[0] {
                        out.push(DyadicCube { k, corner_num: [cn0, cn1], dim: 2 });
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) fn lattice_nus(dim: usize) -> Vec<[u8; 2]> {
    if dim == 1 {
        vec![[0, 0], [1, 0], [2, 0]]
    } else {
        let mut v = Vec::with_capacity(9);
        for a in 0..3u8 {
            for b in 0..3u8 {
                v.push([a, b]);
            }
        }
        v
    }
}

/// Greedy constructive lower bound for the maximal form: scores candidate
/// cubes by the product of their averages, then accepts greedily, each cube
/// claiming a `gamma` fraction of its cells from the unclaimed pool.
/// Deterministic; ties break by cube order.
pub fn maximal_form_lower(
    f1: &GridFunction,
    f2: &GridFunction,
    p1: f64,
    p2: f64,
    gamma: f64,
) -> Result<(FormValue, SparseFamily)> {
    let grid = f1.grid;
    let cand = candidate_cubes(&grid)?;
    let mut scored: Vec<(f64, usize)> = cand
        .iter()
        .enumerate()
        .map(|(i, q)| {
            let geom = q.geom();
            (cube_average(f1, &geom, p1) * cube_average(f2, &geom, p2), i)
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(cand[a.1].cmp(&cand[b.1])));

    let mut free = CellMask::full(grid.cells());
    let mut fam = SparseFamily::new(grid, gamma);
    for &(score, i) in &scored {
        if score <= 0.0 {
            break;
        }
        let q = &cand[i];
        let geom = q.geom();
        let total = geom.cell_count(&grid) as f64;
        let need = (gamma * total).ceil() as usize;
        let mut chosen = Vec::new();
        for c in geom.cells_in_extent(&grid) {
            if free.get(c) {
                chosen.push(c);
                if chosen.len() == need {
                    break;
                }
            }
        }
        if chosen.len() < need {
            continue;
        }
        let mut mask = CellMask::empty(grid.cells());
        for c in chosen {
            mask.set(c);
            free.clear(c);
        }
        fam.cubes.push(*q);
        fam.masks.push(mask);
    }
    let form = sparse_form(&fam, f1, f2, p1, p2);
    Ok((form, fam))
}

/// Result of the Hardy–Littlewood sparse domination: per-lattice stopping
/// families and the pointwise certificate
/// `M f <= 2^d (1-gamma)^{-1} sum_i sum_{Q in S_i} <f>_{Q,1} 1_Q`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct HlDomination {
    pub constant: f64,
    pub families: Vec<SparseFamily>,
    /// max over cells of `M f / bound`; the certificate holds iff `<= 1`.
    pub max_ratio: f64,
}

struct LatticeNode {
    cube: DyadicCube,
    cells: Vec<usize>,
    /// Block cells of the infinite grid (side `2^j` per axis).
    full_count: u64,
    avg: f64,
    children: Vec<usize>,
}

/// Tree of lattice blocks meeting the extent for one shifted lattice, with
/// cube averages of `amps` (measure = full block cell count, so blocks may
/// reach past the extent where the function is zero). The returned roots are
/// the level-`jmax` blocks.
fn build_lattice_tree(
    grid: &Grid,
    nu: [u8; 2],
    amps: &[f64],
    jmax: u32,
) -> Result<(Vec<LatticeNode>, Vec<usize>)> {
    let k_cell = cell_generation(grid)?;
    let n = grid.n;
    let d = grid.dim;
    let mut nodes: Vec<LatticeNode> = Vec::new();
    let mut levels: Vec<HashMap<[i64; 2], usize>> = Vec::new();
    for j in 0..=jmax {
        let mut map = HashMap::new();
        let k = k_cell - j as i32;
        let mut blocks0 = BTreeSet::new();
        let mut blocks1 = BTreeSet::new();
        for i in 0..n {
            blocks0.insert(lattice_block(n, nu[0], j, i).1);
            if d == 2 {
                blocks1.insert(lattice_block(n, nu[1], j, i).1);
            }
        }
        if d == 1 {
            blocks1.insert(0);
        }
        let r0 = lattice_residue(nu[0], j);
        let r1 = lattice_residue(nu[1], j);
        for &b0 in &blocks0 {
            for &b1 in &blocks1 {
                let cube = DyadicCube {
                    k,
                    corner_num: [3 * b0 + r0, if d == 2 { 3 * b1 + r1 } else { 0 }],
                    dim: d,
                };
                let cell_list = cube.geom().cells_in_extent(grid);
                if cell_list.is_empty() {
                    continue;
                }
                let sum: f64 = cell_list.iter().map(|&c| amps[c]).sum();
                let full_count = 1u64 << (j as u64 * d as u64);
                let idx = nodes.len();
                nodes.push(LatticeNode {
                    cube,
                    cells: cell_list,
                    full_count,
                    avg: sum / full_count as f64,
                    children: Vec::new(),
                });
                map.insert([b0, b1], idx);
            }
        }
        levels.push(map);
    }
    for j in 0..jmax as usize {
        let lower: Vec<usize> = levels[j].values().copied().collect();
        for idx in lower {
            let cell0 = nodes[idx].cells[0];
            let m = grid.multi(cell0);
            let pb0 = lattice_block(n, nu[0], j as u32 + 1, m[0]).1;
            let pb1 = if d == 2 { lattice_block(n, nu[1], j as u32 + 1, m[1]).1 } else { 0 };
            let pidx = levels[j + 1][&[pb0, pb1]];
            nodes[pidx].children.push(idx);
        }
    }
    let roots: Vec<usize> = levels[jmax as usize].values().copied().collect();
    Ok((nodes, roots))
}

/// Constructive sparse domination of the shifted-lattice maximal function by
/// stopping-time families, one per lattice, with level ratio
/// `a = 2^d (1-gamma)^{-1}`. Stopping cubes may reach past the extent; their
/// out-of-extent mask cells are counted exactly in `virtual_extra`.
pub fn hl_sparse_dominate(f: &GridFunction, gamma: f64) -> Result<HlDomination> {
    let grid = f.grid;
    let n = grid.n;
    let d = grid.dim;
    let a = (2.0f64).powi(d as i32) / (1.0 - gamma);
    let constant = a;
    let cells = grid.cells();
    let amps: Vec<f64> = (0..cells).map(|c| f.amplitude(c)).collect();
    let mut families = Vec::new();
    if amps.iter().all(|&v| v == 0.0) {
        return Ok(HlDomination { constant, families, max_ratio: 0.0 });
    }
    let mut bound = vec![0.0f64; cells];
    // the certificate only needs stopping levels down to the smallest
    // positive value of the maximal function
    let m = f.hl_maximal(1.0);
    let min_m_pos = (0..cells)
        .map(|c| m.values[c].re)
        .filter(|&v| v > 0.0)
        .fold(f64::INFINITY, f64::min);
    let lvl_lo_global = min_m_pos.log(a).floor() as i64 - 1;

    for nu in lattice_nus(d) {
        // grow the tree until the top blocks sit below every stopping level,
        // so each stopping cube has a parent capping its average
        let mut jmax = n.trailing_zeros() + 1;
        let floor_thr = a.powi(lvl_lo_global as i32);
        let (nodes, roots) = loop {
            if jmax as usize * d >= 62 {
                return Err(Error::BadParameter(
                    "dynamic range of |f| too large for the stopping construction".into(),
                ));
            }
            let (nodes, roots) = build_lattice_tree(&grid, nu, &amps, jmax)?;
            if roots.iter().all(|&r| nodes[r].avg <= floor_thr) {
                break (nodes, roots);
            }
            jmax += 2;
        };
        let max_avg = nodes.iter().map(|nd| nd.avg).fold(0.0, f64::max);
        if max_avg == 0.0 {
            continue;
        }
        let lvl_hi = (max_avg.log(a).floor() as i64).max(lvl_lo_global);
        let lvl_lo = lvl_lo_global;

        let mut fam = SparseFamily::new(grid, gamma);
        // stopping cubes per level, maximal by DFS from the roots;
        // stop_sets[0] is the highest threshold
        let mut stop_sets: Vec<Vec<usize>> = Vec::new();
        for lvl in (lvl_lo..=lvl_hi).rev() {
            let thr = a.powi(lvl as i32);
            let mut stops = Vec::new();
            let mut stack: Vec<usize> = roots.clone();
            while let Some(idx) = stack.pop() {
                if nodes[idx].avg > thr {
                    stops.push(idx);
                } else {
                    stack.extend(nodes[idx].children.iter().copied());
                }
            }
            stop_sets.push(stops);
        }
        for (si, stops) in stop_sets.iter().enumerate() {
            // next-finer stopping set: in-extent cells and per-node handles
            let mut inner_mask = CellMask::empty(cells);
            let empty: Vec<usize> = Vec::new();
            let inner: &Vec<usize> = if si > 0 { &stop_sets[si - 1] } else { &empty };
            for &ni in inner {
                for &c in &nodes[ni].cells {
                    inner_mask.set(c);
                }
            }
            for &idx in stops {
                let mut mask = CellMask::empty(cells);
                for &c in &nodes[idx].cells {
                    if !inner_mask.get(c) {
                        mask.set(c);
                    }
                }
                // out-of-extent part of E = (Q \ Omega_next) \ extent, exact
                let out_q = nodes[idx].full_count - nodes[idx].cells.len() as u64;
                let mut out_inner = 0u64;
                for &ni in inner {
                    if nodes[idx].cube.contains_cube(&nodes[ni].cube) {
                        out_inner += nodes[ni].full_count - nodes[ni].cells.len() as u64;
                    }
                }
                fam.cubes.push(nodes[idx].cube);
                fam.masks.push(mask);
                fam.virtual_extra.push(out_q - out_inner);
                for &c in &nodes[idx].cells {
                    bound[c] += constant * nodes[idx].avg;
                }
            }
        }
        families.push(fam);
    }
    // certificate: the maximal function against the accumulated field
    let mut max_ratio = 0.0f64;
    for c in 0..cells {
        let mf = m.values[c].re;
        if mf > 0.0 {
            max_ratio = max_ratio.max(mf / bound[c]);
        }
    }
    Ok(HlDomination { constant, families, max_ratio })
}

/// Splits a family (understood as one three-lattice class of triples of an
/// originally `gamma`-sparse family) into `m_parts` subfamilies, each
/// constructively sparse at
/// `gamma_tilde = (1 + (3^d gamma^{-1} - 1)/M)^{-1}`.
///
/// Cubes are assigned finest-first, each to the subfamily carrying the least
/// mass inside the cube so far; by pigeonhole that mass is at most
/// `(K-1)|Q|/M` (`K = 3^d/gamma`), which caps every subfamily's Carleson
/// density at `1 + (K-1)/M = gamma_tilde^{-1}` and leaves room for the
/// bottom-up mask assignment.
pub fn carleson_split(
    fam: &SparseFamily,
    original_gamma: f64,
    m_parts: usize,
) -> Result<Vec<SparseFamily>> {
    if m_parts == 0 {
        return Err(Error::BadParameter("need at least one part".into()));
    }
    let grid = fam.grid;
    let d = grid.dim as f64;
    let kc = 3.0f64.powf(d) / original_gamma;
    let gamma_tilde = 1.0 / (1.0 + (kc - 1.0) / m_parts as f64);
    let m = fam.len();
    let measures: Vec<f64> =
        (0..m).map(|i| fam.effective_geom(i).cell_count(&grid) as f64).collect();
    let inside = |inner: usize, outer: usize| -> bool {
        if fam.triple {
            triple_inside(&fam.cubes[inner], &fam.cubes[outer])
        } else {
            fam.cubes[outer].contains_cube(&fam.cubes[inner])
        }
    };
    let mut parts: Vec<SparseFamily> = (0..m_parts)
        .map(|_| SparseFamily { triple: fam.triple, ..SparseFamily::new(grid, gamma_tilde) })
        .collect();
    // finest first; ties by cube order
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| fam.cubes[j].k.cmp(&fam.cubes[i].k).then(fam.cubes[i].cmp(&fam.cubes[j])));
    let mut assigned: Vec<Vec<usize>> = vec![Vec::new(); m_parts];
    let mut free: Vec<CellMask> = (0..m_parts).map(|_| CellMask::full(grid.cells())).collect();
    for &i in &order {
        // subfamily with the least already-assigned mass inside this cube
        let mut best = 0usize;
        let mut best_mass = f64::INFINITY;
        for (b, members) in assigned.iter().enumerate() {
            let mass: f64 = members.iter().filter(|&&j| inside(j, i)).map(|&j| measures[j]).sum();
            if mass < best_mass {
                best_mass = mass;
                best = b;
            }
        }
        let geom = fam.effective_geom(i);
        let need = (gamma_tilde * geom.cell_count(&grid) as f64).ceil() as usize;
        let mut mask = CellMask::empty(grid.cells());
        let mut got = 0usize;
        for c in geom.cells_in_extent(&grid) {
            if free[best].get(c) {
                mask.set(c);
                free[best].clear(c);
                got += 1;
                if got == need {
                    break;
                }
            }
        }
        assigned[best].push(i);
        parts[best].cubes.push(fam.cubes[i]);
        parts[best].masks.push(mask);
    }
    // top up the quota-limited masks with whatever cells stayed free
    for (b, part) in parts.iter_mut().enumerate() {
        for i in 0..part.len() {
            let geom = part.effective_geom(i);
            for c in geom.cells_in_extent(&grid) {
                if free[b].get(c) {
                    part.masks[i].set(c);
                    free[b].clear(c);
                }
            }
        }
    }
    Ok(parts)
}

/// `inner`'s triple inside `outer`'s triple (plain cubes, exact).
fn triple_inside(inner: &DyadicCube, outer: &DyadicCube) -> bool {
    if outer.k > inner.k {
        return false;
    }
    let scale = 1i64 << (inner.k - outer.k);
    (0..inner.dim).all(|a| {
        let olo = (outer.corner_num[a] / 3 - 1) * scale;
        let ohi = olo + 3 * scale;
        let ilo = inner.corner_num[a] / 3 - 1;
        olo <= ilo && ilo + 3 <= ohi
    })
}
