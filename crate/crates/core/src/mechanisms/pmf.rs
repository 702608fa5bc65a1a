//! Exact output distributions for small report spaces.

use super::{Mechanism, Report};
use crate::domain::{MssReport, SsBlockParams};
use crate::error::{MssError, Result};

/// Largest report space `report_pmf` will enumerate.
pub const PMF_OUTCOME_LIMIT: u128 = 1_000_000;

fn binomial(n: usize, r: usize) -> u128 {
    if r > n {
        return 0;
    }
    let r = r.min(n - r);
    (0..r).fold(1u128, |acc, i| acc.saturating_mul((n - i) as u128) / (i as u128 + 1))
}

fn check_capacity(size: u128) -> Result<()> {
    if size > PMF_OUTCOME_LIMIT {
        Err(MssError::Capacity { size, limit: PMF_OUTCOME_LIMIT })
    } else {
        Ok(())
    }
}

/// Visits every `r`-subset of `[n]` in lexicographic order.
fn for_each_subset(n: usize, r: usize, mut visit: impl FnMut(&[u32])) {
    if r > n {
        return;
    }
    let mut idx: Vec<u32> = (0..r as u32).collect();
    loop {
        visit(&idx);
        // rightmost position that can still advance
        let mut i = r;
        while i > 0 && idx[i - 1] as usize == n - r + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return;
        }
        let i = i - 1;
        idx[i] += 1;
        for t in i + 1..r {
            idx[t] = idx[t - 1] + 1;
        }
    }
}

/// SS probabilities of every ω-subset given true value `r`.
fn ss_subset_pmf(block: &SsBlockParams, r: usize, mut emit: impl FnMut(Vec<u32>, f64)) {
    let m = block.m;
    let with_truth = block.p / binomial(m - 1, block.omega - 1) as f64;
    let without = (1.0 - block.p) / binomial(m - 1, block.omega) as f64;
    for_each_subset(m, block.omega, |z| {
        let prob = if z.contains(&(r as u32)) { with_truth } else { without };
        emit(z.to_vec(), prob);
    });
}

/// Map from every possible report to its exact probability given input `x`.
pub fn report_pmf(mech: &Mechanism, x: usize) -> Result<Vec<(Report, f64)>> {
    if x >= mech.k() {
        return Err(MssError::invalid(format!("value {x} outside [0, {})", mech.k())));
    }
    let mut out = Vec::new();
    match mech {
        Mechanism::Grr(g) => {
            for y in 0..g.k {
                out.push((Report::Grr(y), if y == x { g.p } else { g.q }));
            }
        }
        Mechanism::Ss(s) => {
            check_capacity(binomial(s.params.m, s.params.omega))?;
            ss_subset_pmf(&s.params, x, |z, p| out.push((Report::Ss(z), p)));
        }
        Mechanism::Oue(o) => {
            check_capacity(1u128.checked_shl(o.k as u32).unwrap_or(u128::MAX))?;
            for mask in 0u64..(1u64 << o.k) {
                let mut prob = 1.0;
                let mut ones = Vec::new();
                for a in 0..o.k {
                    let set = mask >> a & 1 == 1;
                    let pa = if a == x { o.p } else { o.q };
                    prob *= if set { pa } else { 1.0 - pa };
                    if set {
                        ones.push(a as u32);
                    }
                }
                out.push((Report::Oue(ones), prob));
            }
        }
        Mechanism::Mss(m) => {
            let moduli = &m.moduli;
            let size: u128 = moduli
                .blocks()
                .iter()
                .map(|b| binomial(b.m, b.omega))
                .fold(0u128, |a, b| a.saturating_add(b));
            check_capacity(size)?;
            let pick = 1.0 / moduli.ell() as f64;
            for (j, block) in moduli.blocks().iter().enumerate() {
                ss_subset_pmf(block, x % block.m, |z, p| {
                    out.push((Report::Mss(MssReport { j, z }), pick * p))
                });
            }
        }
    }
    Ok(out)
}
