//! Shared domain types: histograms, datasets, per-block subset-selection
//! parameters, moduli sets and MSS reports.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{MssError, Result};

/// Frequency vector over `[k]`.
///
/// True distributions are nonnegative and sum to one. Estimates produced by
/// the unbiased decoders may have negative entries and are never projected
/// unless [`Histogram::project_to_simplex`] is called explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    f: Vec<f64>,
}

impl Histogram {
    /// Builds a true distribution, checking nonnegativity and normalization.
    pub fn distribution(f: Vec<f64>) -> Result<Self> {
        if f.is_empty() {
            return Err(MssError::invalid("histogram must be nonempty"));
        }
        if let Some(v) = f.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(MssError::invalid(format!("negative or non-finite frequency {v}")));
        }
        let total: f64 = f.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(MssError::invalid(format!("frequencies sum to {total}, not 1")));
        }
        Ok(Histogram { f })
    }

    /// Wraps a raw estimate; entries may be negative.
    pub fn estimate(f: Vec<f64>) -> Self {
        Histogram { f }
    }

    pub fn k(&self) -> usize {
        self.f.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.f
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.f
    }

    pub fn sum(&self) -> f64 {
        self.f.iter().sum()
    }

    /// `(1/k)·‖self − other‖²`.
    pub fn mse(&self, other: &Histogram) -> f64 {
        assert_eq!(self.k(), other.k(), "histograms over different domains");
        let sq: f64 = self
            .f
            .iter()
            .zip(&other.f)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        sq / self.k() as f64
    }

    /// Optional post-processing: clamp negatives to zero and renormalize.
    /// Falls back to uniform if everything clamps to zero.
    pub fn project_to_simplex(&self) -> Histogram {
        let mut f: Vec<f64> = self.f.iter().map(|v| v.max(0.0)).collect();
        let total: f64 = f.iter().sum();
        if total > 0.0 {
            f.iter_mut().for_each(|v| *v /= total);
        } else {
            let u = 1.0 / f.len() as f64;
            f.iter_mut().for_each(|v| *v = u);
        }
        Histogram { f }
    }

    /// Residue marginals `g_j[a] = Σ_{x ≡ a mod m_j} f_x`, stacked over blocks.
    pub fn residue_marginals(&self, moduli: &[usize]) -> Vec<Vec<f64>> {
        moduli
            .iter()
            .map(|&m| {
                let mut g = vec![0.0; m];
                for (x, &fx) in self.f.iter().enumerate() {
                    g[x % m] += fx;
                }
                g
            })
            .collect()
    }
}

/// The private inputs of `n` users, each in `[0, k)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    k: usize,
    values: Vec<usize>,
}

impl Dataset {
    pub fn new(k: usize, values: Vec<usize>) -> Result<Self> {
        if let Some(v) = values.iter().find(|&&v| v >= k) {
            return Err(MssError::invalid(format!("value {v} outside [0, {k})")));
        }
        Ok(Dataset { k, values })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[usize] {
        &self.values
    }

    /// Empirical histogram of the dataset.
    pub fn histogram(&self) -> Histogram {
        let mut f = vec![0.0; self.k];
        for &v in &self.values {
            f[v] += 1.0;
        }
        let n = self.values.len().max(1) as f64;
        f.iter_mut().for_each(|c| *c /= n);
        Histogram::estimate(f)
    }
}

/// Subset-selection parameters for one block of size `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsBlockParams {
    pub m: usize,
    pub omega: usize,
    pub eps: f64,
    pub exp_eps: f64,
    /// Probability that the true value is in the reported subset.
    pub p: f64,
    /// Probability that a fixed non-true value is in the reported subset.
    pub q: f64,
    /// Prior-free marginal inclusion probability `q + (p − q)/m`.
    pub pi: f64,
}

impl SsBlockParams {
    pub fn new(m: usize, eps: f64) -> Result<Self> {
        if m < 2 {
            return Err(MssError::invalid(format!("block size {m} < 2")));
        }
        if !(eps.is_finite() && eps >= 0.0) {
            return Err(MssError::invalid(format!("privacy budget {eps} must be finite and >= 0")));
        }
        let exp_eps = eps.exp();
        let omega = optimal_subset_size(m, exp_eps);
        Ok(Self::with_omega(m, omega, eps, exp_eps))
    }

    pub(crate) fn with_omega(m: usize, omega: usize, eps: f64, exp_eps: f64) -> Self {
        // Written with e^{-ε} so that very large budgets stay finite.
        let (mf, wf) = (m as f64, omega as f64);
        let inv = (-eps).exp();
        let denom = wf + (mf - wf) * inv;
        let p = wf / denom;
        let q = wf * ((wf - 1.0) + (mf - wf) * inv) / ((mf - 1.0) * denom);
        let pi = q + (p - q) / mf;
        SsBlockParams { m, omega, eps, exp_eps, p, q, pi }
    }

    /// Residue inclusion probability `q + (p − q)·g` for marginal mass `g`.
    pub fn inclusion(&self, g: f64) -> f64 {
        self.q + (self.p - self.q) * g
    }
}

/// `⌊m/(e^ε+1)⌉` rounded half away from zero, clamped to `[1, m−1]`.
pub fn optimal_subset_size(m: usize, exp_eps: f64) -> usize {
    let raw = (m as f64 / (exp_eps + 1.0)).round();
    (raw.max(1.0) as usize).clamp(1, m - 1)
}

/// Which validity condition a moduli tuple violates.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModuliViolation {
    NotCoprime { a: usize, b: usize },
    Coverage { product: u128, k: usize },
    Rank { sum: usize, k: usize },
}

impl fmt::Display for ModuliViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ModuliViolation::NotCoprime { a, b } => write!(f, "moduli {a} and {b} share a factor"),
            ModuliViolation::Coverage { product, k } => {
                write!(f, "product of moduli {product} < k = {k}")
            }
            ModuliViolation::Rank { sum, k } => write!(f, "sum of (m_j - 1) = {sum} < k = {k}"),
        }
    }
}

pub(crate) fn gcd(mut a: usize, mut b: usize) -> usize {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

fn product_saturating(moduli: &[usize]) -> u128 {
    moduli
        .iter()
        .fold(1u128, |acc, &m| acc.saturating_mul(m as u128))
}

/// Checks pairwise coprimality, CRT coverage `Π m_j ≥ k` and the rank
/// condition `Σ (m_j − 1) ≥ k`, in that order.
pub fn validate_moduli(moduli: &[usize], k: usize) -> Result<()> {
    if moduli.is_empty() {
        return Err(MssError::invalid("empty moduli list"));
    }
    if let Some(&m) = moduli.iter().find(|&&m| m < 2) {
        return Err(MssError::invalid(format!("modulus {m} < 2")));
    }
    for (i, &a) in moduli.iter().enumerate() {
        for &b in &moduli[i + 1..] {
            if gcd(a, b) != 1 {
                return Err(MssError::InvalidModuli(ModuliViolation::NotCoprime { a, b }));
            }
        }
    }
    let product = product_saturating(moduli);
    if product < k as u128 {
        return Err(MssError::InvalidModuli(ModuliViolation::Coverage { product, k }));
    }
    let sum: usize = moduli.iter().map(|m| m - 1).sum();
    if sum < k {
        return Err(MssError::InvalidModuli(ModuliViolation::Rank { sum, k }));
    }
    Ok(())
}

/// Pairwise-coprime moduli covering `[k]`, with per-block SS parameters at
/// a fixed privacy budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModuliSet {
    moduli: Vec<usize>,
    k: usize,
    blocks: Vec<SsBlockParams>,
}

impl ModuliSet {
    /// Validates the tuple and derives block parameters.
    ///
    /// A single modulus `m ≥ k` is accepted even though it fails the rank
    /// inequality: its design matrix is a column selection of the identity
    /// and has full column rank.
    pub fn new(moduli: Vec<usize>, k: usize, eps: f64) -> Result<Self> {
        match moduli.as_slice() {
            [m] if *m >= 2 && *m >= k => {}
            _ => validate_moduli(&moduli, k)?,
        }
        Self::build(moduli, k, eps)
    }

    /// Pairwise-coprime moduli with `Π m_j ≥ k`, without the rank condition.
    ///
    /// Enough for perturbation, attack analysis and message sizes; the
    /// residue design may then be rank deficient, which only ridge decoding
    /// (`λ > 0`) tolerates.
    pub fn covering(moduli: Vec<usize>, k: usize, eps: f64) -> Result<Self> {
        match validate_moduli(&moduli, k) {
            Ok(()) | Err(MssError::InvalidModuli(ModuliViolation::Rank { .. })) => {}
            Err(e) => return Err(e),
        }
        Self::build(moduli, k, eps)
    }

    fn build(moduli: Vec<usize>, k: usize, eps: f64) -> Result<Self> {
        if k < 1 {
            return Err(MssError::invalid("domain size must be >= 1"));
        }
        if !(eps.is_finite() && eps > 0.0) {
            return Err(MssError::invalid(format!("privacy budget {eps} must be > 0")));
        }
        let exp_eps = eps.exp();
        let blocks = moduli
            .iter()
            .map(|&m| SsBlockParams::with_omega(m, optimal_subset_size(m, exp_eps), eps, exp_eps))
            .collect();
        Ok(ModuliSet { moduli, k, blocks })
    }

    pub fn moduli(&self) -> &[usize] {
        &self.moduli
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn ell(&self) -> usize {
        self.moduli.len()
    }

    pub fn eps(&self) -> f64 {
        self.blocks[0].eps
    }

    pub fn blocks(&self) -> &[SsBlockParams] {
        &self.blocks
    }

    pub fn block(&self, j: usize) -> &SsBlockParams {
        &self.blocks[j]
    }

    /// Total number of design rows `T = Σ m_j`.
    pub fn total_rows(&self) -> usize {
        self.moduli.iter().sum()
    }

    /// Same moduli at another privacy budget.
    pub fn with_eps(&self, eps: f64) -> Result<Self> {
        Self::build(self.moduli.clone(), self.k, eps)
    }
}

/// Residue vector `(x mod m_0, …, x mod m_{ℓ−1})`.
pub fn rns_encode(x: usize, moduli: &ModuliSet) -> Result<Vec<usize>> {
    if x >= moduli.k() {
        return Err(MssError::invalid(format!("value {x} outside [0, {})", moduli.k())));
    }
    Ok(moduli.moduli().iter().map(|&m| x % m).collect())
}

/// A single MSS message: block index and a sorted residue subset.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MssReport {
    pub j: usize,
    pub z: Vec<u32>,
}

impl MssReport {
    /// Checks `j < ℓ`, `|z| = ω_j`, members distinct, sorted and `< m_j`.
    pub fn check(&self, moduli: &ModuliSet) -> Result<()> {
        if self.j >= moduli.ell() {
            return Err(MssError::MalformedReport(format!(
                "block {} out of range (ell = {})",
                self.j,
                moduli.ell()
            )));
        }
        let block = moduli.block(self.j);
        if self.z.len() != block.omega {
            return Err(MssError::MalformedReport(format!(
                "subset size {} != omega {} for block {}",
                self.z.len(),
                block.omega,
                self.j
            )));
        }
        if self.z.windows(2).any(|w| w[0] >= w[1]) {
            return Err(MssError::MalformedReport("subset not strictly increasing".into()));
        }
        if self.z.last().is_some_and(|&a| a as usize >= block.m) {
            return Err(MssError::MalformedReport(format!(
                "residue outside [0, {})",
                block.m
            )));
        }
        Ok(())
    }
}
