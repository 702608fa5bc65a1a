//! LSMR for damped least squares `min ‖Ax − b‖² + damp²‖x‖²`
//! (Fong & Saunders, SIAM J. Sci. Comput. 33(5), 2011).

use super::{norm, LinearOperator};
use crate::error::{MssError, Result};

/// Why the iteration stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    /// `atol`/`btol` test satisfied (or `b = 0`, or `Aᵀb = 0`).
    Tolerance,
    MaxIter,
    ConditionLimit,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// Estimate of `‖[b; 0] − [A; damp·I] x‖`.
    pub residual_norm: f64,
    /// Estimate of `‖Aᵀr − damp²x‖`.
    pub normal_residual_norm: f64,
    pub cond_estimate: f64,
    pub stop: StopReason,
}

#[derive(Debug, Clone, Copy)]
pub struct LsmrOptions {
    /// Ridge parameter λ; the solver damping is `√λ`.
    pub lambda: f64,
    pub atol: f64,
    pub btol: f64,
    pub conlim: f64,
    /// `None` means `4 · ncols`.
    pub maxiter: Option<usize>,
}

impl Default for LsmrOptions {
    fn default() -> Self {
        Self { lambda: 0.0, atol: 1e-10, btol: 1e-10, conlim: 1e8, maxiter: None }
    }
}

impl LsmrOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        Self { lambda, ..Self::default() }
    }
}

/// Stable Givens rotation: `(c, s, r)` with `[c s; -s c] [a; b] = [r; 0]`.
fn sym_ortho(a: f64, b: f64) -> (f64, f64, f64) {
    if b == 0.0 {
        let c = if a == 0.0 { 1.0 } else { a.signum() };
        (c, 0.0, a.abs())
    } else if a == 0.0 {
        (0.0, b.signum(), b.abs())
    } else if b.abs() > a.abs() {
        let tau = a / b;
        let s = b.signum() / (1.0 + tau * tau).sqrt();
        let c = s * tau;
        (c, s, b / s)
    } else {
        let tau = b / a;
        let c = a.signum() / (1.0 + tau * tau).sqrt();
        let s = c * tau;
        (c, s, a / c)
    }
}

fn scale(v: &mut [f64], by: f64) {
    v.iter_mut().for_each(|x| *x *= by);
}

pub fn lsmr<A: LinearOperator + ?Sized>(a: &A, b: &[f64], opts: &LsmrOptions) -> Result<SolverReport> {
    let (m, n) = (a.nrows(), a.ncols());
    if b.len() != m {
        return Err(MssError::DimensionMismatch { expected: m, got: b.len() });
    }
    if !(opts.lambda >= 0.0) || !opts.lambda.is_finite() {
        return Err(MssError::invalid("ridge parameter must be finite and nonnegative"));
    }
    let damp = opts.lambda.sqrt();
    let maxiter = opts.maxiter.unwrap_or(4 * n).max(1);
    let ctol = if opts.conlim > 0.0 { 1.0 / opts.conlim } else { 0.0 };

    let mut u = b.to_vec();
    let normb = norm(&u);
    let mut beta = normb;
    if beta > 0.0 {
        scale(&mut u, 1.0 / beta);
    }
    let mut v = vec![0.0; n];
    a.apply_t(&u, &mut v);
    let mut alpha = norm(&v);
    if alpha > 0.0 {
        scale(&mut v, 1.0 / alpha);
    }

    let mut x = vec![0.0; n];
    let mut report = SolverReport {
        x: Vec::new(),
        iterations: 0,
        residual_norm: beta,
        normal_residual_norm: alpha * beta,
        cond_estimate: 1.0,
        stop: StopReason::Tolerance,
    };
    if alpha * beta == 0.0 {
        report.x = x;
        return Ok(report);
    }

    let mut zetabar = alpha * beta;
    let mut alphabar = alpha;
    let mut rho = 1.0;
    let mut rhobar = 1.0;
    let mut cbar = 1.0;
    let mut sbar = 0.0;
    let mut h = v.clone();
    let mut hbar = vec![0.0; n];

    let mut betadd = beta;
    let mut betad = 0.0;
    let mut rhodold = 1.0;
    let mut tautildeold = 0.0;
    let mut thetatilde = 0.0;
    let mut zeta = 0.0;
    let mut d = 0.0;

    let mut norm_a2 = alpha * alpha;
    let mut maxrbar: f64 = 0.0;
    let mut minrbar: f64 = 1e100;

    let mut av = vec![0.0; m];
    let mut atu = vec![0.0; n];
    let mut itn = 0;
    loop {
        itn += 1;

        // bidiagonalization step
        a.apply(&v, &mut av);
        for (ui, &avi) in u.iter_mut().zip(&av) {
            *ui = avi - alpha * *ui;
        }
        beta = norm(&u);
        if beta > 0.0 {
            scale(&mut u, 1.0 / beta);
            a.apply_t(&u, &mut atu);
            for (vi, &ai) in v.iter_mut().zip(&atu) {
                *vi = ai - beta * *vi;
            }
            alpha = norm(&v);
            if alpha > 0.0 {
                scale(&mut v, 1.0 / alpha);
            }
        }

        // rotation eliminating the damping term
        let (chat, shat, alphahat) = sym_ortho(alphabar, damp);

        let rhoold = rho;
        let (c, s, rho_new) = sym_ortho(alphahat, beta);
        rho = rho_new;
        let thetanew = s * alpha;
        alphabar = c * alpha;

        let rhobarold = rhobar;
        let zetaold = zeta;
        let thetabar = sbar * rho;
        let rhotemp = cbar * rho;
        let (cb, sb, rb) = sym_ortho(cbar * rho, thetanew);
        cbar = cb;
        sbar = sb;
        rhobar = rb;
        zeta = cbar * zetabar;
        zetabar = -sbar * zetabar;

        let hbar_coef = thetabar * rho / (rhoold * rhobarold);
        let x_coef = zeta / (rho * rhobar);
        let h_coef = thetanew / rho;
        for i in 0..n {
            hbar[i] = h[i] - hbar_coef * hbar[i];
            x[i] += x_coef * hbar[i];
            h[i] = v[i] - h_coef * h[i];
        }

        // residual norm estimate
        let betaacute = chat * betadd;
        let betacheck = -shat * betadd;
        let betahat = c * betaacute;
        betadd = -s * betaacute;

        let thetatildeold = thetatilde;
        let (ctildeold, stildeold, rhotildeold) = sym_ortho(rhodold, thetabar);
        thetatilde = stildeold * rhobar;
        rhodold = ctildeold * rhobar;
        betad = -stildeold * betad + ctildeold * betahat;

        tautildeold = (zetaold - thetatildeold * tautildeold) / rhotildeold;
        let taud = (zeta - thetatilde * tautildeold) / rhodold;
        d += betacheck * betacheck;
        let normr = (d + (betad - taud).powi(2) + betadd * betadd).sqrt();

        norm_a2 += beta * beta;
        let norm_a = norm_a2.sqrt();
        norm_a2 += alpha * alpha;

        maxrbar = maxrbar.max(rhobarold);
        if itn > 1 {
            minrbar = minrbar.min(rhobarold);
        }
        let cond_a = maxrbar.max(rhotemp) / minrbar.min(rhotemp);

        let normar = zetabar.abs();
        let normx = norm(&x);

        let test1 = normr / normb;
        let test2 = if norm_a * normr != 0.0 { normar / (norm_a * normr) } else { f64::INFINITY };
        let test3 = 1.0 / cond_a;
        let t1 = test1 / (1.0 + norm_a * normx / normb);
        let rtol = opts.btol + opts.atol * norm_a * normx / normb;

        let stop = if test1 <= rtol || test2 <= opts.atol || 1.0 + t1 <= 1.0 || 1.0 + test2 <= 1.0 {
            Some(StopReason::Tolerance)
        } else if test3 <= ctol || 1.0 + test3 <= 1.0 {
            Some(StopReason::ConditionLimit)
        } else if itn >= maxiter {
            Some(StopReason::MaxIter)
        } else {
            None
        };
        // exact breakdown of the bidiagonalization: the Krylov space is exhausted
        let stop = stop.or(if beta == 0.0 || alpha == 0.0 { Some(StopReason::Tolerance) } else { None });

        if let Some(stop) = stop {
            report.x = x;
            report.iterations = itn;
            report.residual_norm = normr;
            report.normal_residual_norm = normar;
            report.cond_estimate = cond_a;
            report.stop = stop;
            return Ok(report);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::super::tests::random_sparse;
    use super::super::SparseMatrix;
    use super::*;
    use crate::rng::stream;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;

    fn dense_ridge(a: &SparseMatrix, b: &[f64], lambda: f64) -> Vec<f64> {
        let d = a.to_dense();
        let am = DMatrix::from_fn(a.rows(), a.cols(), |i, j| d[i][j]);
        let bv = DVector::from_column_slice(b);
        let lhs = am.transpose() * &am + DMatrix::identity(a.cols(), a.cols()) * lambda;
        let rhs = am.transpose() * bv;
        lhs.cholesky().unwrap().solve(&rhs).iter().copied().collect()
    }

    fn rel_err(x: &[f64], y: &[f64]) -> f64 {
        let diff: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        norm(&diff) / norm(y).max(1e-300)
    }

    #[test]
    fn identity_returns_rhs() {
        let b = vec![1.0, -2.0, 0.5];
        let r = lsmr(&SparseMatrix::identity(3), &b, &LsmrOptions::default()).unwrap();
        assert!(rel_err(&r.x, &b) < 1e-14);
        assert_eq!(r.stop, StopReason::Tolerance);
    }

    #[test]
    fn scalar_least_squares() {
        let a = SparseMatrix::from_triplets(2, 1, &[(0, 0, 1.0), (1, 0, 1.0)]).unwrap();
        let r = lsmr(&a, &[1.0, 3.0], &LsmrOptions::default()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = random_sparse(10, 5, 0.5, 1);
        let r = lsmr(&a, &[0.0; 10], &LsmrOptions::default()).unwrap();
        assert_eq!(r.x, vec![0.0; 5]);
        assert_eq!(r.iterations, 0);
    }

    #[test]
    fn matches_dense_normal_equations() {
        let mut rng = stream(9, &[]);
        for (seed, lambda) in [(10, 0.0), (11, 0.1), (12, 1.0), (13, 0.0)] {
            let mut a = random_sparse(50, 20, 0.3, seed);
            // keep it comfortably full rank
            let extra = SparseMatrix::identity(20);
            let mut t = Vec::new();
            for i in 0..50 {
                let (idx, val) = a.row(i);
                t.extend(idx.iter().zip(val).map(|(&c, &v)| (i, c as usize, v)));
            }
            for i in 0..20 {
                let (idx, val) = extra.row(i);
                t.extend(idx.iter().zip(val).map(|(&c, &v)| (50 + i, c as usize, v)));
            }
            a = SparseMatrix::from_triplets(70, 20, &t).unwrap();
            let b: Vec<f64> = (0..70).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let r = lsmr(&a, &b, &LsmrOptions::with_lambda(lambda)).unwrap();
            let oracle = dense_ridge(&a, &b, lambda);
            assert!(rel_err(&r.x, &oracle) < 1e-6, "lambda {lambda}: {}", rel_err(&r.x, &oracle));
            assert!(r.iterations <= 80);
        }
    }

    #[test]
    fn maxiter_is_reported() {
        let a = random_sparse(60, 40, 0.3, 5);
        let b = vec![1.0; 60];
        let r = lsmr(&a, &b, &LsmrOptions { maxiter: Some(3), ..LsmrOptions::default() }).unwrap();
        assert_eq!(r.iterations, 3);
        assert_eq!(r.stop, StopReason::MaxIter);
    }

    #[test]
    fn normal_residual_is_monotone() {
        let a = random_sparse(40, 15, 0.4, 6);
        let b: Vec<f64> = (0..40).map(|i| (i as f64).sin()).collect();
        let mut prev = f64::INFINITY;
        for it in 1..15 {
            let r = lsmr(&a, &b, &LsmrOptions { maxiter: Some(it), atol: 0.0, btol: 0.0, ..Default::default() })
                .unwrap();
            let ax = a.matvec(&r.x).unwrap();
            let res: Vec<f64> = b.iter().zip(&ax).map(|(bi, ai)| bi - ai).collect();
            let ar = norm(&a.rmatvec(&res).unwrap());
            assert!(ar <= prev * (1.0 + 1e-10) + 1e-10, "iteration {it}: {ar} > {prev}");
            prev = ar;
        }
    }

    #[test]
    fn small_ridge_approaches_unregularized() {
        let a = random_sparse(30, 10, 0.5, 7);
        let b: Vec<f64> = (0..30).map(|i| (i as f64 * 0.3).cos()).collect();
        let exact = lsmr(&a, &b, &LsmrOptions::default()).unwrap().x;
        let mut prev = f64::INFINITY;
        for lambda in [1e-1, 1e-2, 1e-3, 1e-4] {
            let x = lsmr(&a, &b, &LsmrOptions::with_lambda(lambda)).unwrap().x;
            let e = rel_err(&x, &exact);
            assert!(e < prev);
            prev = e;
        }
        assert!(prev < 1e-2);
    }

    #[test]
    fn rhs_length_checked() {
        let a = SparseMatrix::identity(3);
        assert!(lsmr(&a, &[1.0], &LsmrOptions::default()).is_err());
        assert!(lsmr(&a, &[1.0; 3], &LsmrOptions::with_lambda(-1.0)).is_err());
    }
}
