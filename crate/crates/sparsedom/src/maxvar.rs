//! Maximal, square-function, variation-norm and truncation operators built
//! from a multi-scale family, plus the linearization embeddings that turn
//! them into vector-valued families for the domination engine.

use crate::grid::{GridFunction, ValueNorm};
use crate::operators::{Kernel, OperatorFamily};
use crate::seq;
use crate::{Error, Result};
use num_complex::Complex64;

/// `S_r T f(x) = (sum_j |T_j f(x)|^r)^{1/r}`; `r = inf` is the maximal
/// operator `sup_j |T_j f(x)|`.
pub fn sr_apply(fam: &OperatorFamily, r: f64, f: &GridFunction) -> Result<GridFunction> {
    let pieces = fam.apply_all(f)?;
    let grid = f.grid;
    let mut out = GridFunction::zeros(grid, 1);
    for c in 0..grid.cells() {
        let amps = pieces.iter().map(|t| t.amplitude(c));
        let v = if r.is_infinite() {
            amps.fold(0.0, f64::max)
        } else {
            amps.map(|a| a.powf(r)).sum::<f64>().powf(1.0 / r)
        };
        out.values[c] = Complex64::new(v, 0.0);
    }
    Ok(out)
}

/// Exact `V^r` norm of a finite sequence of complex values.
///
/// The search is exact: for each starting index, increments add along chains
/// (an O(n^2) dynamic program). For real scalar sequences the candidate set
/// is first restricted to local extrema and endpoints, which never changes
/// the value (verified against the exhaustive oracle in the tests).
pub fn vr_norm(seq_values: &[Complex64], r: f64) -> f64 {
    if seq_values.is_empty() {
        return 0.0;
    }
    if r < 1.0 {
        return f64::NAN;
    }
    let is_real = seq_values.iter().all(|z| z.im == 0.0);
    if is_real && seq_values.len() > 3 {
        let reals: Vec<f64> = seq_values.iter().map(|z| z.re).collect();
        let mut candidates = vec![0usize];
        for i in 1..reals.len() - 1 {
            let (a, b, c) = (reals[i - 1], reals[i], reals[i + 1]);
            if (b - a) * (c - b) <= 0.0 {
                candidates.push(i);
            }
        }
        candidates.push(reals.len() - 1);
        let vals: Vec<f64> = candidates.iter().map(|&i| reals[i]).collect();
        return seq::vr_norm_by(&vals, r, |a| a.abs(), |a, b| (a - b).abs());
    }
    seq::vr_norm_by(seq_values, r, |z| z.norm(), |a, b| (a - b).norm())
}

/// `V^r` norm of a vector-valued sequence (rows of length `m`).
pub fn vr_norm_vec(rows: &[&[Complex64]], r: f64) -> f64 {
    let norm0 = |row: &&[Complex64]| row.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
    let dist = |a: &&[Complex64], b: &&[Complex64]| {
        a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
    };
    seq::vr_norm_by(rows, r, norm0, dist)
}

/// Pointwise `V^r` norm of the scale sequence `j -> T_j f(x)`.
pub fn vr_operator(fam: &OperatorFamily, r: f64, f: &GridFunction) -> Result<GridFunction> {
    let pieces = fam.apply_all(f)?;
    let grid = f.grid;
    let mut out = GridFunction::zeros(grid, 1);
    let mut buf = vec![Complex64::default(); pieces.len()];
    let scalar = fam.out_dim() == 1;
    for c in 0..grid.cells() {
        let v = if scalar {
            for (j, t) in pieces.iter().enumerate() {
                buf[j] = t.values[c];
            }
            vr_norm(&buf, r)
        } else {
            let rows: Vec<&[Complex64]> = pieces.iter().map(|t| t.value(c)).collect();
            vr_norm_vec(&rows, r)
        };
        out.values[c] = Complex64::new(v, 0.0);
    }
    Ok(out)
}

/// Long/short variation split of a family of dilates `t -> f * sigma_t` over
/// a finite dilation set: the dyadic (long) variation samples the octave
/// endpoints `2^j`, the short part takes the l^r sum of the within-octave
/// variation seminorms. Pointwise `V^r over E <= long + short`.
pub fn long_short_split(
    sigma: &crate::operators::Dilatable,
    dilations: &[f64],
    r: f64,
    f: &GridFunction,
) -> Result<(GridFunction, GridFunction)> {
    let grid = f.grid;
    if dilations.is_empty() {
        return Ok((GridFunction::zeros(grid, 1), GridFunction::zeros(grid, 1)));
    }
    let jmin = dilations.iter().map(|t| t.log2().floor() as i32).min().unwrap();
    let jmax = dilations.iter().map(|t| t.log2().floor() as i32).max().unwrap();
    // dyadic samples spanning every octave that meets E
    let mut dyadic_vals = Vec::new();
    for j in jmin..=jmax + 1 {
        dyadic_vals.push(sigma.apply((j as f64).exp2(), f)?);
    }
    let mut long = GridFunction::zeros(grid, 1);
    for c in 0..grid.cells() {
        let seq_c: Vec<Complex64> = dyadic_vals.iter().map(|g| g.values[c]).collect();
        long.values[c] = Complex64::new(vr_norm(&seq_c, r), 0.0);
    }
    // short variation: within each octave, seminorm over E plus the octave
    // endpoints (the chaining insertion points)
    let mut short_pow = vec![0.0f64; grid.cells()];
    for j in jmin..=jmax {
        let lo = (j as f64).exp2();
        let hi = lo * 2.0;
        let mut ts: Vec<f64> = dilations.iter().copied().filter(|&t| t >= lo && t < hi).collect();
        if ts.is_empty() {
            continue;
        }
        ts.insert(0, lo);
        ts.push(hi);
        let vals: Vec<GridFunction> =
            ts.iter().map(|&t| sigma.apply(t, f)).collect::<Result<Vec<_>>>()?;
        for c in 0..grid.cells() {
            let seq_c: Vec<Complex64> = vals.iter().map(|g| g.values[c]).collect();
            let semi = seq::vr_seminorm_by(&seq_c, r, |a, b| (a - b).norm());
            short_pow[c] += if r.is_infinite() { semi } else { semi.powf(r) };
        }
    }
    let mut short = GridFunction::zeros(grid, 1);
    for c in 0..grid.cells() {
        let v = if r.is_infinite() { short_pow[c] } else { short_pow[c].powf(1.0 / r) };
        short.values[c] = Complex64::new(v, 0.0);
    }
    Ok((long, short))
}

/// `V^r` of the dilate curve over the finite set `E` directly.
pub fn vr_over_dilations(
    sigma: &crate::operators::Dilatable,
    dilations: &[f64],
    r: f64,
    f: &GridFunction,
) -> Result<GridFunction> {
    let grid = f.grid;
    let vals: Vec<GridFunction> =
        dilations.iter().map(|&t| sigma.apply(t, f)).collect::<Result<Vec<_>>>()?;
    let mut out = GridFunction::zeros(grid, 1);
    for c in 0..grid.cells() {
        let seq_c: Vec<Complex64> = vals.iter().map(|g| g.values[c]).collect();
        out.values[c] = Complex64::new(vr_norm(&seq_c, r), 0.0);
    }
    Ok(out)
}

const TRUNC_SCALE_LIMIT: usize = 64;

/// Maximal truncation `sup_{n1 <= n2} |sum_{j=n1}^{n2} T_j f(x)|`, exact over
/// all pairs via prefix sums.
pub fn trunc_max(fam: &OperatorFamily, f: &GridFunction) -> Result<GridFunction> {
    let len = (fam.n2 - fam.n1 + 1) as usize;
    if len > TRUNC_SCALE_LIMIT {
        return Err(Error::RangeTooLong(len, TRUNC_SCALE_LIMIT));
    }
    let prefixes = prefix_sums(fam, f)?;
    let grid = f.grid;
    let m = fam.out_dim();
    let mut out = GridFunction::zeros(grid, 1);
    for c in 0..grid.cells() {
        let mut best = 0.0f64;
        for a in 0..prefixes.len() {
            for b in a + 1..prefixes.len() {
                let mut s = 0.0;
                for comp in 0..m {
                    s += (prefixes[b].values[c * m + comp] - prefixes[a].values[c * m + comp])
                        .norm_sqr();
                }
                best = best.max(s);
            }
        }
        out.values[c] = Complex64::new(best.sqrt(), 0.0);
    }
    Ok(out)
}

/// Variational truncation: the `v^r` seminorm of the partial-sum sequence
/// `n -> sum_{j<=n} T_j f(x)`, exact via the chain dynamic program.
pub fn trunc_var(fam: &OperatorFamily, r: f64, f: &GridFunction) -> Result<GridFunction> {
    let len = (fam.n2 - fam.n1 + 1) as usize;
    if len > TRUNC_SCALE_LIMIT {
        return Err(Error::RangeTooLong(len, TRUNC_SCALE_LIMIT));
    }
    let prefixes = prefix_sums(fam, f)?;
    let grid = f.grid;
    let m = fam.out_dim();
    let mut out = GridFunction::zeros(grid, 1);
    for c in 0..grid.cells() {
        let rows: Vec<Vec<Complex64>> =
            prefixes.iter().map(|p| p.value(c).to_vec()).collect();
        let dist = |a: &Vec<Complex64>, b: &Vec<Complex64>| {
            a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt()
        };
        let _ = m;
        out.values[c] = Complex64::new(seq::vr_seminorm_by(&rows, r, dist), 0.0);
    }
    Ok(out)
}

/// Partial sums `P_n = sum_{j=n1..=n} T_j f`, prepended with `P_{n1-1} = 0`.
fn prefix_sums(fam: &OperatorFamily, f: &GridFunction) -> Result<Vec<GridFunction>> {
    let mut out = vec![{
        let mut z = GridFunction::zeros(f.grid, fam.out_dim());
        z.value_norm = fam.out_norm;
        z
    }];
    let mut acc = out[0].clone();
    for j in fam.scales() {
        acc = acc.add(&fam.apply_scale(j, f)?)?;
        out.push(acc.clone());
    }
    Ok(out)
}

/// Linearization flavor for [`hj_embed`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EmbedKind {
    /// `H_j f(x, k) = delta_{jk} T_j f(x)`, aggregated in l^r.
    Lr,
    /// `H_j f(x, n) = T_j f(x) 1_{j <= n}`, aggregated in V^r: partial sums.
    Vr,
    /// `H_j f(x, (n1,n2)) = T_j f(x) 1_{n1 <= j <= n2}`: all truncations.
    Truncation,
}

/// Embeds a scalar family into a vector-valued family whose aggregated value
/// norm reproduces the square/maximal (`Lr`), variation (`Vr`) or truncation
/// operators exactly. The embedded kernels inherit the support condition.
pub fn hj_embed(fam: &OperatorFamily, kind: EmbedKind, r: f64) -> Result<OperatorFamily> {
    let len = (fam.n2 - fam.n1 + 1) as usize;
    let zero = GridFunction::zeros(fam.grid, 1);
    let mut kernels = Vec::with_capacity(len);
    for (idx, j) in fam.scales().enumerate() {
        let Kernel::Scalar(k) = fam.kernel(j) else {
            return Err(Error::BadParameter("embedding needs a scalar family".into()));
        };
        let cols: Vec<GridFunction> = match kind {
            EmbedKind::Lr => {
                (0..len).map(|slot| if slot == idx { k.clone() } else { zero.clone() }).collect()
            }
            EmbedKind::Vr => {
                (0..len).map(|slot| if idx <= slot { k.clone() } else { zero.clone() }).collect()
            }
            EmbedKind::Truncation => {
                // slots indexed by pairs (n1, n2), n1 <= n2
                let mut cols = Vec::new();
                for n1 in 0..len {
                    for n2 in n1..len {
                        cols.push(if n1 <= idx && idx <= n2 { k.clone() } else { zero.clone() });
                    }
                }
                cols
            }
        };
        kernels.push(Kernel::Columns(cols));
    }
    let mut out = OperatorFamily::new(fam.grid, fam.n1, fam.n2, kernels)?;
    out.out_norm = match kind {
        EmbedKind::Lr => {
            if r.is_infinite() {
                ValueNorm::Sup
            } else {
                ValueNorm::Lp(r)
            }
        }
        EmbedKind::Vr => ValueNorm::Vr(r),
        EmbedKind::Truncation => ValueNorm::Sup,
    };
    Ok(out)
}

/// The dual-norm linearizer: given the embedded output `g = sum_j H_j f` and
/// a nonnegative weight, builds the vector-valued `f_2` with unit dual norm
/// per cell such that `<g(x,.), f_2(x,.)> = |g(x,.)|_B omega(x)` exactly.
/// Supported for the `Lr` kinds (dual of l^r is l^{r'}).
pub fn linearizer(g: &GridFunction, r: f64, omega: &GridFunction) -> Result<GridFunction> {
    if g.grid != omega.grid || omega.value_dim != 1 {
        return Err(Error::GridMismatch);
    }
    let m = g.value_dim;
    let mut out = GridFunction::zeros(g.grid, m);
    out.value_norm = if r.is_infinite() {
        ValueNorm::Lp(1.0)
    } else if r == 1.0 {
        ValueNorm::Sup
    } else {
        ValueNorm::Lp(r / (r - 1.0))
    };
    for c in 0..g.grid.cells() {
        let w = omega.values[c];
        let row = g.value(c);
        if r.is_infinite() {
            // dual of sup: point mass at the argmax coordinate
            let (best, _) = row
                .iter()
                .enumerate()
                .map(|(i, z)| (i, z.norm()))
                .fold((0usize, -1.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
            let z = row[best];
            if z.norm() > 0.0 {
                out.values[c * m + best] = (z / z.norm()).conj() * w;
            }
        } else {
            let amp = g.amplitude(c);
            if amp == 0.0 {
                continue;
            }
            // |g|_r^{1-r} |g_k|^{r-1} sgn(g_k): unit l^{r'} norm, pairing = |g|_r
            for k in 0..m {
                let z = row[k];
                if z.norm() > 0.0 {
                    let mag = amp.powf(1.0 - r) * z.norm().powf(r - 1.0);
                    out.values[c * m + k] = (z / z.norm()).conj() * mag * w;
                }
            }
        }
    }
    Ok(out)
}
