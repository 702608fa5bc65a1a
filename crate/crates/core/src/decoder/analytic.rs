//! Closed-form and trace-based error models, and report sizes.

use num_bigint::BigUint;
use num_traits::One;
use rand::Rng;
use rayon::prelude::*;

use super::{apply_weights, build_design, WeightedDesign};
use crate::domain::{optimal_subset_size, Histogram, ModuliSet};
use crate::error::{MssError, Result};
use crate::mechanisms::MechTag;
use crate::rng::{label, stream};
use crate::sparse::{extreme_singular_values, lsmr, default_budget};

/// Largest `T` for which the trace is computed column by column.
pub const EXACT_TRACE_LIMIT: usize = 2000;
/// Largest `T` for which the dense covariance is materialized.
pub const DENSE_COVARIANCE_LIMIT: usize = 4096;

#[derive(Debug, Clone, Copy)]
pub struct MseOptions {
    pub lambda: f64,
    pub exact_limit: usize,
    pub min_probes: usize,
    pub max_probes: usize,
    /// Target relative standard error of the stochastic trace.
    pub target_rel_se: f64,
    pub seed: u64,
}

impl Default for MseOptions {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            exact_limit: EXACT_TRACE_LIMIT,
            min_probes: 256,
            max_probes: 4096,
            target_rel_se: 0.02,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseEstimate {
    pub value: f64,
    /// Zero when the trace was computed exactly.
    pub stderr: f64,
    /// Number of random probes, zero when exact.
    pub probes: usize,
}

/// Second moments of one SS block given residue marginals `g`:
/// `P[a, b ∈ Z] = β + (α − β)(g_a + g_b)` for `a ≠ b`.
#[derive(Debug, Clone, Copy)]
struct PairRates {
    alpha: f64,
    beta: f64,
}

fn pair_rates(m: usize, omega: usize, p: f64) -> PairRates {
    let (mf, w) = (m as f64, omega as f64);
    let alpha = p * (w - 1.0) / (mf - 1.0);
    // with m = 2 there is never a third residue, so β has zero weight
    let beta = if m > 2 {
        (p * (w - 1.0) * (w - 2.0) + (1.0 - p) * w * (w - 1.0)) / ((mf - 1.0) * (mf - 2.0))
    } else {
        0.0
    };
    PairRates { alpha, beta }
}

struct Model {
    /// Residue marginals per block.
    g: Vec<Vec<f64>>,
    /// Diagonal part of the block covariance after splitting off the
    /// low-rank terms, stacked.
    diag: Vec<f64>,
    rates: Vec<PairRates>,
    /// `1/(n_j(p_j − q_j)²)` per block.
    scale: Vec<f64>,
    block_n: f64,
    ell: usize,
}

fn model(f: &Histogram, moduli: &ModuliSet, n: f64) -> Result<Model> {
    if f.k() != moduli.k() {
        return Err(MssError::DimensionMismatch { expected: moduli.k(), got: f.k() });
    }
    if !(n >= 1.0) || !n.is_finite() {
        return Err(MssError::invalid(format!("population size {n} must be >= 1")));
    }
    let ell = moduli.ell();
    let block_n = n / ell as f64;
    let g = f.residue_marginals(moduli.moduli());
    let mut diag = Vec::with_capacity(moduli.total_rows());
    let mut rates = Vec::with_capacity(ell);
    let mut scale = Vec::with_capacity(ell);
    for (j, gj) in g.iter().enumerate() {
        let b = moduli.block(j);
        let d = b.p - b.q;
        let c = 1.0 / (block_n * d * d);
        let pr = pair_rates(b.m, b.omega, b.p);
        // Σ_j/c = diag(π − β − 2(α−β)g) + β11ᵀ + (α−β)(g1ᵀ + 1gᵀ) − ππᵀ
        diag.extend(gj.iter().map(|&ga| c * (b.inclusion(ga) - pr.beta - 2.0 * (pr.alpha - pr.beta) * ga)));
        rates.push(pr);
        scale.push(c);
    }
    Ok(Model { g, diag, rates, scale, block_n, ell })
}

/// Covariance of the stacked debiased observations with plug-in block
/// counts `n_j = n/ℓ`.
///
/// Within a block this is the exact covariance of SS membership indicators,
/// `(P[a,b ∈ Z] − π_aπ_b)/(n_j(p_j − q_j)²)` with diagonal
/// `π_a(1 − π_a)/(n_j(p_j − q_j)²)`. Blocks are uncorrelated: each block is
/// normalized by its own report count, so conditioning on the counts leaves
/// independent, unbiased blocks.
pub fn analytic_covariance(f: &Histogram, moduli: &ModuliSet, n: f64) -> Result<Vec<Vec<f64>>> {
    let t = moduli.total_rows();
    if t > DENSE_COVARIANCE_LIMIT {
        return Err(MssError::Capacity { size: t as u128, limit: DENSE_COVARIANCE_LIMIT as u128 });
    }
    let md = model(f, moduli, n)?;
    let mut owner = Vec::with_capacity(t);
    let mut local = Vec::with_capacity(t);
    for (j, &m) in moduli.moduli().iter().enumerate() {
        owner.extend(std::iter::repeat(j).take(m));
        local.extend(0..m);
    }
    let pi = |i: usize| moduli.block(owner[i]).inclusion(md.g[owner[i]][local[i]]);
    let mut sigma = vec![vec![0.0; t]; t];
    for r in 0..t {
        for c in 0..t {
            let j = owner[r];
            sigma[r][c] = if j != owner[c] {
                0.0
            } else if r == c {
                md.scale[j] * pi(r) * (1.0 - pi(r))
            } else {
                let pr = md.rates[j];
                let joint = pr.beta + (pr.alpha - pr.beta) * (md.g[j][local[r]] + md.g[j][local[c]]);
                md.scale[j] * (joint - pi(r) * pi(c))
            };
        }
    }
    Ok(sigma)
}

/// Applies the gain matrix `G = (A_wᵀA_w + λI)⁻¹A_wᵀW^{1/2}` to an
/// unweighted observation vector.
struct Gain<'a> {
    design: &'a WeightedDesign,
    scales: Vec<f64>,
    lambda: f64,
}

impl Gain<'_> {
    fn apply(&self, y: &[f64]) -> Result<Vec<f64>> {
        let b: Vec<f64> = y.iter().zip(&self.scales).map(|(a, s)| a * s).collect();
        Ok(lsmr(self.design.matrix(), &b, &self.design.solver_options(self.lambda))?.x)
    }

    fn sq_norm(&self, y: &[f64]) -> Result<f64> {
        Ok(sq(&self.apply(y)?))
    }
}

fn sq(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum()
}

fn inner(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(1/k)·Tr(G Σ(f) Gᵀ)` with default options and ridge `lambda`.
pub fn analytic_mse(f: &Histogram, moduli: &ModuliSet, n: f64, lambda: f64) -> Result<f64> {
    Ok(analytic_mse_with(f, moduli, n, &MseOptions { lambda, ..MseOptions::default() })?.value)
}

/// `(1/k)·Tr(G Σ(f) Gᵀ)` without forming `G`.
///
/// The diagonal part of `Σ` costs one solve per row for `T ≤ exact_limit`
/// and Rademacher probes otherwise; the low-rank parts cost `2ℓ` solves.
pub fn analytic_mse_with(f: &Histogram, moduli: &ModuliSet, n: f64, opts: &MseOptions) -> Result<MseEstimate> {
    mse_impl(f, moduli, n, opts, true)
}

/// As [`analytic_mse_with`] for a design already known to have full column rank.
pub(crate) fn analytic_mse_full_rank(
    f: &Histogram,
    moduli: &ModuliSet,
    n: f64,
    opts: &MseOptions,
) -> Result<MseEstimate> {
    mse_impl(f, moduli, n, opts, false)
}

fn mse_impl(f: &Histogram, moduli: &ModuliSet, n: f64, opts: &MseOptions, check_rank: bool) -> Result<MseEstimate> {
    if !(opts.lambda >= 0.0) {
        return Err(MssError::invalid("ridge parameter must be nonnegative"));
    }
    let md = model(f, moduli, n)?;
    let design = apply_weights(&build_design(moduli), &vec![md.block_n; md.ell])?;
    if check_rank && opts.lambda == 0.0 {
        let sv = extreme_singular_values(design.matrix(), default_budget(moduli.k()));
        if sv.rank_deficient() {
            return Err(MssError::RankDeficient);
        }
    }
    let gain = Gain { scales: design.row_scales(), design: &design, lambda: opts.lambda };
    let t = moduli.total_rows();

    let (trace, se, probes) = if t <= opts.exact_limit {
        let parts: Vec<Result<f64>> = (0..t)
            .into_par_iter()
            .map(|i| {
                let mut e = vec![0.0; t];
                e[i] = 1.0;
                Ok(md.diag[i] * gain.sq_norm(&e)?)
            })
            .collect();
        let mut sum = 0.0;
        for p in parts {
            sum += p?;
        }
        (sum, 0.0, 0)
    } else {
        hutchinson(&gain, &md.diag, opts)?
    };

    // G·1_j and G·g_j for every block
    let embedded: Vec<(Vec<f64>, Vec<f64>)> = (0..md.ell)
        .map(|j| {
            let rows = design.block_rows(j);
            let mut ones = vec![0.0; t];
            let mut g = vec![0.0; t];
            ones[rows.clone()].iter_mut().for_each(|v| *v = 1.0);
            g[rows].copy_from_slice(&md.g[j]);
            (ones, g)
        })
        .collect();
    let solved: Vec<(Vec<f64>, Vec<f64>)> = embedded
        .par_iter()
        .map(|(o, g)| Ok((gain.apply(o)?, gain.apply(g)?)))
        .collect::<Result<_>>()?;

    let mut low_rank = 0.0;
    for (j, (g1, gg)) in solved.iter().enumerate() {
        let b = moduli.block(j);
        let pr = md.rates[j];
        let d = b.p - b.q;
        let gpi: Vec<f64> = g1.iter().zip(gg).map(|(a, c)| b.q * a + d * c).collect();
        low_rank += md.scale[j] * (pr.beta * sq(g1) + 2.0 * (pr.alpha - pr.beta) * inner(gg, g1) - sq(&gpi));
    }

    let k = moduli.k() as f64;
    Ok(MseEstimate { value: (trace + low_rank) / k, stderr: se / k, probes })
}

fn hutchinson(gain: &Gain, diag: &[f64], opts: &MseOptions) -> Result<(f64, f64, usize)> {
    const BATCH: usize = 32;
    let root: Vec<f64> = diag.iter().map(|d| d.max(0.0).sqrt()).collect();
    let mut samples: Vec<f64> = Vec::new();
    loop {
        let start = samples.len();
        let batch: Vec<Result<f64>> = (start..start + BATCH)
            .into_par_iter()
            .map(|p| {
                let mut rng = stream(opts.seed, &[label("hutchinson"), p as u64]);
                let y: Vec<f64> = root.iter().map(|r| if rng.gen::<bool>() { *r } else { -*r }).collect();
                gain.sq_norm(&y)
            })
            .collect();
        for b in batch {
            samples.push(b?);
        }
        let count = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / count;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (count - 1.0);
        let se = (var / count).sqrt();
        if samples.len() >= opts.min_probes && (se <= opts.target_rel_se * mean.abs() || samples.len() >= opts.max_probes)
        {
            return Ok((mean, se, samples.len()));
        }
    }
}

/// `4κe^ε / (n(e^ε − 1)²)`.
pub fn worst_case_mse_bound(kappa: f64, eps: f64, n: f64) -> f64 {
    let em1 = eps.exp_m1();
    4.0 * kappa * eps.exp() / (n * em1 * em1)
}

/// `⌈log₂ C(n, r)⌉` from the exact integer binomial.
pub fn log2_binomial_ceil(n: usize, r: usize) -> u64 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    let mut c = BigUint::one();
    for i in 0..r {
        c *= (n - i) as u64;
        c /= (i + 1) as u64;
    }
    ceil_log2(&c)
}

fn ceil_log2(x: &BigUint) -> u64 {
    let bits = x.bits();
    if bits <= 1 {
        return 0;
    }
    if x.trailing_zeros() == Some(bits - 1) {
        bits - 1
    } else {
        bits
    }
}

/// Average MSS message size `⌈log₂ℓ⌉ + (1/ℓ)Σ_j⌈log₂C(m_j, ω_j)⌉`.
pub fn comm_cost_bits(moduli: &ModuliSet) -> f64 {
    let ell = moduli.ell();
    let index_bits = ceil_log2(&BigUint::from(ell));
    let subset: u64 = moduli.blocks().iter().map(|b| log2_binomial_ceil(b.m, b.omega)).sum();
    index_bits as f64 + subset as f64 / ell as f64
}

/// Message size of a baseline mechanism over a domain of size `k`.
pub fn baseline_bits(kind: MechTag, k: usize, eps: f64) -> Result<f64> {
    if k < 2 {
        return Err(MssError::invalid("domain size must be >= 2"));
    }
    Ok(match kind {
        MechTag::Grr => ceil_log2(&BigUint::from(k)) as f64,
        MechTag::Ss => log2_binomial_ceil(k, optimal_subset_size(k, eps.exp())) as f64,
        MechTag::Oue => k as f64,
        MechTag::Mss => return Err(MssError::invalid("MSS message size depends on the moduli; use comm_cost_bits")),
    })
}
