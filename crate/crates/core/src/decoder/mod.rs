//! Server side: residue design matrix, variance weights, block counts,
//! debiasing and the weighted ridge least-squares estimate.

mod analytic;

pub(crate) use analytic::analytic_mse_full_rank;
pub use analytic::{
    analytic_covariance, analytic_mse, analytic_mse_with, baseline_bits, comm_cost_bits,
    log2_binomial_ceil, worst_case_mse_bound, MseEstimate, MseOptions, EXACT_TRACE_LIMIT,
};

use std::ops::Range;

use crate::domain::{Histogram, ModuliSet, MssReport};
use crate::error::{MssError, Result};
use crate::sparse::{lsmr, LsmrOptions, SolverReport, SparseMatrix};

/// Ridge parameter used when none is given: `1/ε²`.
pub fn default_lambda(eps: f64) -> f64 {
    1.0 / (eps * eps)
}

/// Stacked residue-indicator matrix, optionally row-weighted per block.
///
/// The stored matrix is scaled by `√(w_j / n)` where `n = Σ_j n_j`, and the
/// solver damping by `λ / n`. This is the same minimizer as scaling by `√w_j`
/// with damping `λ`, and makes the estimate exactly invariant to duplicating
/// every report when `λ = 0`.
#[derive(Debug, Clone)]
pub struct WeightedDesign {
    matrix: SparseMatrix,
    blocks: Vec<Range<usize>>,
    sqrt_w: Vec<f64>,
    block_scale: Vec<f64>,
    scale_n: f64,
    moduli: ModuliSet,
}

/// `T × k` matrix with `A_j[r, x] = 1{x mod m_j = r}`, unit weights.
pub fn build_design(moduli: &ModuliSet) -> WeightedDesign {
    let k = moduli.k();
    let ell = moduli.ell();
    let rows = moduli.total_rows();
    let mut offsets = Vec::with_capacity(rows + 1);
    let mut indices = Vec::with_capacity(ell * k);
    let mut blocks = Vec::with_capacity(ell);
    offsets.push(0);
    let mut start = 0;
    for &m in moduli.moduli() {
        for r in 0..m {
            indices.extend((r..k).step_by(m).map(|x| x as u32));
            offsets.push(indices.len());
        }
        blocks.push(start..start + m);
        start += m;
    }
    let values = vec![1.0; indices.len()];
    let matrix = SparseMatrix::new(rows, k, offsets, indices, values)
        .expect("residue design is well formed by construction");
    WeightedDesign {
        matrix,
        blocks,
        sqrt_w: vec![1.0; ell],
        block_scale: vec![1.0; ell],
        scale_n: 1.0,
        moduli: moduli.clone(),
    }
}

/// `√w_j = (p_j − q_j) / √(π_j(1 − π_j)/n_j)` with the prior-free marginal `π_j`.
pub fn block_weight_sqrt(moduli: &ModuliSet, j: usize, n_j: f64) -> f64 {
    let b = moduli.block(j);
    (b.p - b.q) / (b.pi * (1.0 - b.pi) / n_j).sqrt()
}

/// Reweights `design` for per-block report counts `n_j`. Blocks with no
/// reports get weight zero.
pub fn apply_weights(design: &WeightedDesign, block_n: &[f64]) -> Result<WeightedDesign> {
    let ell = design.moduli.ell();
    if block_n.len() != ell {
        return Err(MssError::DimensionMismatch { expected: ell, got: block_n.len() });
    }
    if block_n.iter().any(|&n| !(n >= 0.0) || !n.is_finite()) {
        return Err(MssError::invalid("block counts must be finite and nonnegative"));
    }
    let total: f64 = block_n.iter().sum();
    if total <= 0.0 {
        return Err(MssError::NoData);
    }
    let sqrt_w: Vec<f64> = (0..ell)
        .map(|j| if block_n[j] > 0.0 { block_weight_sqrt(&design.moduli, j, block_n[j]) } else { 0.0 })
        .collect();
    // √(w_j/n) = (p−q)·√(n_j/n) / √(π(1−π)), free of the absolute scale
    let block_scale: Vec<f64> = (0..ell)
        .map(|j| {
            let b = design.moduli.block(j);
            if block_n[j] > 0.0 {
                (b.p - b.q) * (block_n[j] / total).sqrt() / (b.pi * (1.0 - b.pi)).sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let unit = build_design(&design.moduli);
    let mut out = WeightedDesign { sqrt_w, block_scale, scale_n: total, ..unit };
    out.matrix = out.matrix.scale_rows(&out.row_scales())?;
    Ok(out)
}

impl WeightedDesign {
    /// The solver matrix, i.e. `A_w / √n`.
    pub fn matrix(&self) -> &SparseMatrix {
        &self.matrix
    }

    pub fn moduli(&self) -> &ModuliSet {
        &self.moduli
    }

    /// Row range of block `j`.
    pub fn block_rows(&self, j: usize) -> Range<usize> {
        self.blocks[j].clone()
    }

    /// `√w_j` per block.
    pub fn sqrt_weights(&self) -> &[f64] {
        &self.sqrt_w
    }

    /// The factor `n` the stored matrix has been divided by (squared).
    pub fn scale_n(&self) -> f64 {
        self.scale_n
    }

    /// Per-row factor applied to observations before solving, `√(w_j/n)`.
    pub(crate) fn row_scales(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.matrix.rows()];
        for (rows, &s) in self.blocks.iter().zip(&self.block_scale) {
            out[rows.clone()].iter_mut().for_each(|v| *v = s);
        }
        out
    }

    /// Solver options for ridge parameter `lambda` on the original scale.
    pub(crate) fn solver_options(&self, lambda: f64) -> LsmrOptions {
        LsmrOptions::with_lambda(lambda / self.scale_n)
    }
}

/// Per-block residue membership counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockCounts {
    counts: Vec<Vec<u64>>,
    reports: Vec<u64>,
}

impl BlockCounts {
    pub fn new(moduli: &ModuliSet) -> Self {
        Self {
            counts: moduli.moduli().iter().map(|&m| vec![0; m]).collect(),
            reports: vec![0; moduli.ell()],
        }
    }

    /// Adds one validated report.
    pub fn add(&mut self, report: &MssReport, moduli: &ModuliSet) -> Result<()> {
        report.check(moduli)?;
        self.add_unchecked(report.j, &report.z);
        Ok(())
    }

    pub(crate) fn add_unchecked(&mut self, j: usize, z: &[u32]) {
        let c = &mut self.counts[j];
        for &a in z {
            c[a as usize] += 1;
        }
        self.reports[j] += 1;
    }

    /// Elementwise sum; both sides must come from the same moduli.
    pub fn merge(&mut self, other: &BlockCounts) -> Result<()> {
        if self.reports.len() != other.reports.len()
            || self.counts.iter().zip(&other.counts).any(|(a, b)| a.len() != b.len())
        {
            return Err(MssError::invalid("block counts built for different moduli"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
        self.reports.iter_mut().zip(&other.reports).for_each(|(x, y)| *x += y);
        Ok(())
    }

    /// Residue counts `c_j`.
    pub fn block(&self, j: usize) -> &[u64] {
        &self.counts[j]
    }

    /// Report counts `n_j`.
    pub fn block_reports(&self) -> &[u64] {
        &self.reports
    }

    pub fn total(&self) -> u64 {
        self.reports.iter().sum()
    }
}

/// Counts a batch of reports in one pass.
pub fn aggregate<'a, I>(reports: I, moduli: &ModuliSet) -> Result<BlockCounts>
where
    I: IntoIterator<Item = &'a MssReport>,
{
    let mut counts = BlockCounts::new(moduli);
    for r in reports {
        counts.add(r, moduli)?;
    }
    Ok(counts)
}

/// Stacked `ŝ_j = (c_j/n_j − q_j)/(p_j − q_j)`; blocks without reports give zeros.
pub fn debias(counts: &BlockCounts, moduli: &ModuliSet) -> Result<Vec<f64>> {
    if counts.counts.len() != moduli.ell() {
        return Err(MssError::DimensionMismatch { expected: moduli.ell(), got: counts.counts.len() });
    }
    if counts.total() == 0 {
        return Err(MssError::NoData);
    }
    let mut s = Vec::with_capacity(moduli.total_rows());
    for (j, c) in counts.counts.iter().enumerate() {
        let b = moduli.block(j);
        if c.len() != b.m {
            return Err(MssError::DimensionMismatch { expected: b.m, got: c.len() });
        }
        let n_j = counts.reports[j];
        if n_j == 0 {
            s.extend(std::iter::repeat(0.0).take(b.m));
        } else {
            let n = n_j as f64;
            s.extend(c.iter().map(|&x| (x as f64 / n - b.q) / (b.p - b.q)));
        }
    }
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct Estimate {
    pub histogram: Histogram,
    pub solver: SolverReport,
}

/// `argmin_z ‖A_w z − W^{1/2}s‖² + λ‖z‖²`.
pub fn estimate(design: &WeightedDesign, s: &[f64], lambda: f64) -> Result<Estimate> {
    let rows = design.matrix.rows();
    if s.len() != rows {
        return Err(MssError::DimensionMismatch { expected: rows, got: s.len() });
    }
    let scales = design.row_scales();
    let b: Vec<f64> = s.iter().zip(&scales).map(|(x, w)| x * w).collect();
    let solver = lsmr(&design.matrix, &b, &design.solver_options(lambda))?;
    Ok(Estimate { histogram: Histogram::estimate(solver.x.clone()), solver })
}

/// Weights, debiases and solves from raw counts.
pub fn decode(counts: &BlockCounts, moduli: &ModuliSet, lambda: f64) -> Result<Estimate> {
    let n: Vec<f64> = counts.block_reports().iter().map(|&n| n as f64).collect();
    let design = apply_weights(&build_design(moduli), &n)?;
    let s = debias(counts, moduli)?;
    estimate(&design, &s, lambda)
}
