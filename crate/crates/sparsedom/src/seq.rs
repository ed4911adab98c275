//! Exact r-variation of finite sequences.
//!
//! The supremum defining the variation norm decomposes over the choice of the
//! first point: once the first index is fixed, the r-th powers of consecutive
//! increments add along a chain, so the best chain from each starting index is
//! a quadratic dynamic program. This is exact for scalar, complex and
//! vector-valued sequences alike.

/// V^r norm: `sup |a(n_1)| + (sum |a(n_{v+1}) - a(n_v)|^r)^{1/r}` over
/// increasing subsequences. `r = inf` returns the sup norm.
pub fn vr_norm_by<T, N, D>(items: &[T], r: f64, norm0: N, dist: D) -> f64
where
    N: Fn(&T) -> f64,
    D: Fn(&T, &T) -> f64,
{
    if items.is_empty() {
        return 0.0;
    }
    if r.is_infinite() {
        return items.iter().map(|a| norm0(a)).fold(0.0, f64::max);
    }
    let chain = best_chain_powers(items, r, &dist);
    items
        .iter()
        .enumerate()
        .map(|(i, a)| norm0(a) + chain[i].powf(1.0 / r))
        .fold(0.0, f64::max)
}

/// v^r seminorm: the same supremum without the leading `|a(n_1)|` term.
pub fn vr_seminorm_by<T, D>(items: &[T], r: f64, dist: D) -> f64
where
    D: Fn(&T, &T) -> f64,
{
    if items.len() < 2 {
        return 0.0;
    }
    if r.is_infinite() {
        let mut best = 0.0f64;
        for i in 0..items.len() {
            for j in i + 1..items.len() {
                best = best.max(dist(&items[i], &items[j]));
            }
        }
        return best;
    }
    best_chain_powers(items, r, &dist)
        .into_iter()
        .fold(0.0, f64::max)
        .powf(1.0 / r)
}

/// `out[i]` = max over increasing chains starting at `i` of the sum of
/// r-th powers of increments (0 for the empty chain).
fn best_chain_powers<T, D>(items: &[T], r: f64, dist: &D) -> Vec<f64>
where
    D: Fn(&T, &T) -> f64,
{
    let m = items.len();
    let mut best = vec![0.0f64; m];
    for i in (0..m).rev() {
        for j in i + 1..m {
            let cand = dist(&items[i], &items[j]).powf(r) + best[j];
            if cand > best[i] {
                best[i] = cand;
            }
        }
    }
    best
}
