//! Maximum-weight bipartite matching by the Hungarian method.

/// Matches rows to columns maximizing total weight; `None` marks a missing
/// edge. Returns the column of each row. Every present weight must be
/// positive, so leaving a row unmatched is never better than using an edge.
pub(crate) fn max_weight_matching(w: &[Vec<Option<f64>>], cols: usize) -> Vec<Option<usize>> {
    let rows = w.len();
    let k = rows.max(cols);
    if k == 0 {
        return Vec::new();
    }
    // Square minimization with absent edges at cost zero, 1-indexed as in the
    // potentials formulation.
    let cost = |r: usize, c: usize| -> f64 {
        if r <= rows && c <= cols {
            w[r - 1][c - 1].map_or(0.0, |x| -x)
        } else {
            0.0
        }
    };
    let mut u = vec![0.0; k + 1];
    let mut v = vec![0.0; k + 1];
    let mut owner = vec![0usize; k + 1];
    let mut way = vec![0usize; k + 1];
    for r in 1..=k {
        owner[0] = r;
        let mut c0 = 0;
        let mut minv = vec![f64::INFINITY; k + 1];
        let mut used = vec![false; k + 1];
        loop {
            used[c0] = true;
            let r0 = owner[c0];
            let mut delta = f64::INFINITY;
            let mut c1 = 0;
            for c in 1..=k {
                if used[c] {
                    continue;
                }
                let cur = cost(r0, c) - u[r0] - v[c];
                if cur < minv[c] {
                    minv[c] = cur;
                    way[c] = c0;
                }
                if minv[c] < delta {
                    delta = minv[c];
                    c1 = c;
                }
            }
            for c in 0..=k {
                if used[c] {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            c0 = c1;
            if owner[c0] == 0 {
                break;
            }
        }
        loop {
            let c1 = way[c0];
            owner[c0] = owner[c1];
            c0 = c1;
            if c0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for c in 1..=cols {
        let r = owner[c];
        if r >= 1 && r <= rows && w[r - 1][c - 1].is_some() {
            out[r - 1] = Some(c - 1);
        }
    }
    out
}
