//! Exact linear algebra over big rationals: Gaussian elimination and a dense
//! two-phase simplex with Bland's rule.

use num_rational::BigRational;
use num_traits::{Signed, Zero};

pub(crate) type Q = BigRational;

/// Outcome of solving the equality rows alone.
pub(crate) enum EqSolve {
    Inconsistent,
    Unique(Vec<Q>),
    /// Rank below the number of unknowns.
    Underdetermined,
}

/// Gauss–Jordan elimination on `a z = b`, pivoting on the entry of largest
/// magnitude in each column.
pub(crate) fn solve_equalities(a: &[Vec<Q>], b: &[Q], nvars: usize) -> EqSolve {
    let mut rows: Vec<Vec<Q>> = a
        .iter()
        .zip(b)
        .map(|(r, rhs)| {
            let mut row = r.clone();
            row.push(rhs.clone());
            row
        })
        .collect();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..nvars {
        if r == rows.len() {
            break;
        }
        let Some(best) = (r..rows.len())
            .filter(|&k| !rows[k][c].is_zero())
            .max_by(|&x, &y| rows[x][c].abs().cmp(&rows[y][c].abs()).then(y.cmp(&x)))
        else {
            continue;
        };
        rows.swap(r, best);
        let piv = rows[r][c].clone();
        for v in rows[r].iter_mut() {
            *v = &*v / &piv;
        }
        for k in 0..rows.len() {
            if k != r && !rows[k][c].is_zero() {
                let f = rows[k][c].clone();
                for col in 0..=nvars {
                    let delta = &f * &rows[r][col];
                    rows[k][col] -= delta;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    if rows[r..].iter().any(|row| !row[nvars].is_zero()) {
        return EqSolve::Inconsistent;
    }
    if pivots.len() < nvars {
        return EqSolve::Underdetermined;
    }
    let mut z = vec![Q::zero(); nvars];
    for (k, &c) in pivots.iter().enumerate() {
        z[c] = rows[k][nvars].clone();
    }
    EqSolve::Unique(z)
}

pub(crate) enum Lp {
    Optimal(Vec<Q>),
    Infeasible,
    Unbounded,
}

/// Minimizes `c z` subject to `a_eq z = b_eq`, `a_le z <= b_le`, `z >= 0`.
pub(crate) fn minimize(
    c: &[Q],
    a_eq: &[Vec<Q>],
    b_eq: &[Q],
    a_le: &[Vec<Q>],
    b_le: &[Q],
) -> Lp {
    let nz = c.len();
    let nle = a_le.len();
    let nrows = a_eq.len() + nle;
    let nreal = nz + nle;
    let ncols = nreal + nrows;
    // Tableau rows: [structural | slacks | artificials | rhs].
    let mut t: Vec<Vec<Q>> = Vec::with_capacity(nrows);
    let one = || Q::from_integer(1.into());
    let rows = a_eq
        .iter()
        .zip(b_eq)
        .map(|(r, b)| (r, b, None))
        .chain(a_le.iter().zip(b_le).enumerate().map(|(s, (r, b))| (r, b, Some(s))));
    for (k, (coeffs, rhs, slack)) in rows.enumerate() {
        let mut line = vec![Q::zero(); ncols + 1];
        line[..nz].clone_from_slice(coeffs);
        if let Some(s) = slack {
            line[nz + s] = one();
        }
        line[ncols] = rhs.clone();
        if line[ncols].is_negative() {
            for v in line.iter_mut() {
                *v = -&*v;
            }
        }
        line[nreal + k] = one();
        t.push(line);
    }
    let mut basis: Vec<usize> = (nreal..ncols).collect();

    let mut phase1 = vec![Q::zero(); ncols];
    for v in phase1.iter_mut().skip(nreal) {
        *v = one();
    }
    if !run_simplex(&mut t, &mut basis, &phase1, ncols) {
        return Lp::Unbounded;
    }
    let infeas: Q = basis
        .iter()
        .enumerate()
        .filter(|(_, &b)| b >= nreal)
        .map(|(r, _)| t[r][ncols].clone())
        .fold(Q::zero(), |a, v| a + v);
    if !infeas.is_zero() {
        return Lp::Infeasible;
    }
    // Drive artificials out of the basis, dropping redundant rows.
    let mut r = 0;
    while r < t.len() {
        if basis[r] >= nreal {
            if let Some(col) = (0..nreal).find(|&col| !t[r][col].is_zero()) {
                pivot(&mut t, r, col, ncols);
                basis[r] = col;
            } else {
                t.remove(r);
                basis.remove(r);
                continue;
            }
        }
        r += 1;
    }
    for row in t.iter_mut() {
        for v in row.iter_mut().take(ncols).skip(nreal) {
            *v = Q::zero();
        }
    }
    let mut cost = vec![Q::zero(); ncols];
    cost[..nz].clone_from_slice(c);
    if !run_simplex_limited(&mut t, &mut basis, &cost, ncols, nreal) {
        return Lp::Unbounded;
    }
    let mut z = vec![Q::zero(); nz];
    for (r, &b) in basis.iter().enumerate() {
        if b < nz {
            z[b] = t[r][ncols].clone();
        }
    }
    Lp::Optimal(z)
}

fn pivot(t: &mut [Vec<Q>], r: usize, col: usize, ncols: usize) {
    let piv = t[r][col].clone();
    for v in t[r].iter_mut() {
        *v = &*v / &piv;
    }
    for k in 0..t.len() {
        if k != r && !t[k][col].is_zero() {
            let f = t[k][col].clone();
            for j in 0..=ncols {
                let delta = &f * &t[r][j];
                t[k][j] -= delta;
            }
        }
    }
}

fn run_simplex(t: &mut [Vec<Q>], basis: &mut [usize], cost: &[Q], ncols: usize) -> bool {
    run_simplex_limited(t, basis, cost, ncols, ncols)
}

/// Bland's rule over columns `0..allowed`. Returns false when unbounded.
fn run_simplex_limited(
    t: &mut [Vec<Q>],
    basis: &mut [usize],
    cost: &[Q],
    ncols: usize,
    allowed: usize,
) -> bool {
    loop {
        let entering = (0..allowed).find(|&j| {
            if basis.contains(&j) {
                return false;
            }
            let mut reduced = cost[j].clone();
            for (r, &b) in basis.iter().enumerate() {
                if !t[r][j].is_zero() && !cost[b].is_zero() {
                    reduced -= &cost[b] * &t[r][j];
                }
            }
            reduced.is_negative()
        });
        let Some(col) = entering else { return true };
        let mut leave: Option<(usize, Q)> = None;
        for r in 0..t.len() {
            if t[r][col].is_positive() {
                let ratio = &t[r][ncols] / &t[r][col];
                let better = match &leave {
                    None => true,
                    Some((lr, best)) => ratio < *best || (ratio == *best && basis[r] < basis[*lr]),
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((r, _)) = leave else { return false };
        pivot(t, r, col, ncols);
        basis[r] = col;
    }
}
