//! Extreme singular values by Golub–Kahan (Lanczos) bidiagonalization.
//!
//! Starting from a fixed pseudo-random unit vector `v₁`, the recurrence
//! builds `A V_r = U_r B_r` with `B_r` upper bidiagonal, so that
//! `V_rᵀ AᵀA V_r = B_rᵀ B_r`. The singular values of `B_r` are Ritz values of
//! `AᵀA`: `σ_max(B_r)` grows towards `σ_max(A)` and `σ_min(B_r)` shrinks
//! towards `σ_min(A)`, so the Ritz condition number never overestimates.

use super::{dot, norm, LinearOperator};
use crate::rng::stream;
use rand::Rng;

/// Column counts up to which `V` is kept fully orthogonal.
pub const REORTH_LIMIT: usize = 2000;
/// Hard cap on bidiagonalization steps.
pub const BUDGET_CAP: usize = 500;
/// Ratio below which the matrix is treated as rank deficient.
pub const RANK_TOL: f64 = 1e-12;

const START_SEED: u64 = 0x6b61_7070_615f_7631;
const STAGNATION_TOL: f64 = 1e-9;
const STAGNATION_STEPS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularValues {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub iterations: usize,
    /// The Krylov space was exhausted, so the values are exact up to round-off.
    pub exact: bool,
}

impl SingularValues {
    pub fn rank_deficient(&self) -> bool {
        !(self.sigma_min > RANK_TOL * self.sigma_max)
    }

    /// `σ_max/σ_min`, or `∞` when rank deficient.
    pub fn cond(&self) -> f64 {
        if self.rank_deficient() {
            f64::INFINITY
        } else {
            self.sigma_max / self.sigma_min
        }
    }
}

/// Number of singular values of the upper bidiagonal `(diag, sup)` that are `< x`,
/// by a Sturm count on the zero-diagonal Golub–Kahan tridiagonal.
fn count_below(diag: &[f64], sup: &[f64], x: f64) -> usize {
    // Off-diagonal sequence of the 2r×2r matrix: a₁, b₂, a₂, b₃, …, a_r.
    let mut negatives = 0;
    let mut d = 1.0f64;
    let r = diag.len();
    for i in 0..2 * r {
        let e = if i == 0 {
            0.0
        } else if i % 2 == 1 {
            diag[i / 2]
        } else {
            sup[i / 2 - 1]
        };
        d = -x - if i == 0 { 0.0 } else { e * e / d };
        if d == 0.0 {
            d = -f64::EPSILON * x.abs().max(f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            negatives += 1;
        }
    }
    // eigenvalues come in ±σ pairs; those below −x… are counted by symmetry
    negatives - r
}

fn bisect(diag: &[f64], sup: &[f64], target: usize, hi: f64) -> f64 {
    // smallest x with count_below(x) >= target, i.e. the target-th smallest σ
    let (mut lo, mut hi) = (0.0f64, hi);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if count_below(diag, sup, mid) >= target {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    0.5 * (lo + hi)
}

fn bidiag_extremes(diag: &[f64], sup: &[f64]) -> (f64, f64) {
    let r = diag.len();
    let mut bound = 0.0f64;
    for i in 0..r {
        let left = if i > 0 { sup[i - 1].abs() } else { 0.0 };
        let right = if i < r - 1 { sup[i].abs() } else { 0.0 };
        bound = bound.max(diag[i].abs() + left.max(right) + left.min(right));
    }
    let bound = bound * (1.0 + 1e-12) + f64::MIN_POSITIVE;
    (bisect(diag, sup, 1, bound), bisect(diag, sup, r, bound))
}

fn reorthogonalize(basis: &[Vec<f64>], w: &mut [f64]) {
    for _ in 0..2 {
        for q in basis {
            let c = dot(q, w);
            w.iter_mut().zip(q).for_each(|(wi, qi)| *wi -= c * qi);
        }
    }
}

fn estimate<A: LinearOperator + ?Sized>(a: &A, budget: usize, limit: f64) -> SingularValues {
    let n = a.ncols();
    let m = a.nrows();
    let reorth = n <= REORTH_LIMIT;
    let budget = budget.clamp(1, n.max(1));

    let mut rng = stream(START_SEED, &[n as u64, m as u64]);
    let mut v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut diag = Vec::new();
    let mut sup = Vec::new();
    let mut u = vec![0.0; m];
    let mut w = vec![0.0; n];
    let mut last = (0.0, f64::INFINITY);
    let mut still = 0;
    let mut exact = false;

    loop {
        // u_i = (A v_i − β_i u_{i−1}) / α_i
        let beta_prev = sup.last().copied().unwrap_or(0.0);
        let mut p = vec![0.0; m];
        a.apply(&v, &mut p);
        if beta_prev != 0.0 {
            p.iter_mut().zip(&u).for_each(|(pi, ui)| *pi -= beta_prev * ui);
        }
        let alpha = norm(&p);
        diag.push(alpha);
        if reorth {
            basis.push(v.clone());
        }
        if alpha == 0.0 {
            // A annihilates a vector in the Krylov space
            return SingularValues {
                sigma_max: bidiag_extremes(&diag, &sup).1,
                sigma_min: 0.0,
                iterations: diag.len(),
                exact: true,
            };
        }
        p.iter_mut().for_each(|x| *x /= alpha);
        u = p;

        let (smin, smax) = bidiag_extremes(&diag, &sup);
        let iterations = diag.len();
        if smin > 0.0 && smax / smin > limit {
            return SingularValues { sigma_max: smax, sigma_min: smin, iterations, exact: false };
        }
        let moved = (smax - last.1).abs() / smax + (smin - last.0).abs() / smin.max(f64::MIN_POSITIVE);
        still = if moved < STAGNATION_TOL { still + 1 } else { 0 };
        last = (smin, smax);
        if iterations >= budget || still >= STAGNATION_STEPS {
            return SingularValues { sigma_max: smax, sigma_min: smin, iterations, exact: iterations == n };
        }

        // v_{i+1} = (Aᵀ u_i − α_i v_i) / β_{i+1}
        a.apply_t(&u, &mut w);
        w.iter_mut().zip(&v).for_each(|(wi, vi)| *wi -= alpha * vi);
        if reorth {
            reorthogonalize(&basis, &mut w);
        }
        let beta = norm(&w);
        if beta <= 1e-14 * smax {
            exact = true;
        }
        if exact {
            return SingularValues { sigma_max: smax, sigma_min: smin, iterations, exact };
        }
        sup.push(beta);
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / beta);
    }
}

/// Default iteration budget for a matrix with `cols` columns.
pub fn default_budget(cols: usize) -> usize {
    (2 * cols).min(BUDGET_CAP)
}

/// Largest and smallest singular values within `budget` bidiagonalization steps.
pub fn extreme_singular_values<A: LinearOperator + ?Sized>(a: &A, budget: usize) -> SingularValues {
    estimate(a, budget, f64::INFINITY)
}

/// Spectral condition number with the default budget; `∞` if rank deficient.
pub fn cond<A: LinearOperator + ?Sized>(a: &A) -> f64 {
    extreme_singular_values(a, default_budget(a.ncols())).cond()
}

/// Like [`cond`], but stops as soon as the running estimate exceeds `limit`.
/// The running estimate only increases, so any returned value above `limit`
/// proves the true condition number exceeds it too.
pub fn cond_with_limit<A: LinearOperator + ?Sized>(a: &A, limit: f64) -> f64 {
    estimate(a, default_budget(a.ncols()), limit).cond()
}
