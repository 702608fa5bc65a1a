//! User-side randomizers (GRR, SS, OUE, MSS) and the unbiased single-
//! mechanism frequency estimators.

mod pmf;
mod sampling;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Histogram, ModuliSet, MssReport, SsBlockParams};
use crate::error::{MssError, Result};

pub use pmf::{report_pmf, PMF_OUTCOME_LIMIT};
pub use sampling::SubsetSampler;

/// Mechanism family tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MechTag {
    Grr,
    Ss,
    Oue,
    Mss,
}

impl MechTag {
    pub const ALL: [MechTag; 4] = [MechTag::Grr, MechTag::Ss, MechTag::Oue, MechTag::Mss];

    pub fn as_str(self) -> &'static str {
        match self {
            MechTag::Grr => "grr",
            MechTag::Ss => "ss",
            MechTag::Oue => "oue",
            MechTag::Mss => "mss",
        }
    }
}

impl fmt::Display for MechTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MechTag {
    type Err = MssError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "grr" => Ok(MechTag::Grr),
            "ss" => Ok(MechTag::Ss),
            "oue" => Ok(MechTag::Oue),
            "mss" => Ok(MechTag::Mss),
            other => Err(MssError::invalid(format!("unknown mechanism '{other}'"))),
        }
    }
}

/// Generalized randomized response over `[k]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grr {
    pub k: usize,
    pub eps: f64,
    /// `e^ε/(e^ε + k − 1)`
    pub p: f64,
    /// `1/(e^ε + k − 1)`
    pub q: f64,
}

impl Grr {
    pub fn new(k: usize, eps: f64) -> Result<Self> {
        check_domain(k, eps)?;
        let inv = (-eps).exp();
        let km1 = (k - 1) as f64;
        let p = 1.0 / (1.0 + km1 * inv);
        let q = inv / (1.0 + km1 * inv);
        Ok(Grr { k, eps, p, q })
    }

    pub fn perturb<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> usize {
        debug_assert!(x < self.k);
        if rng.gen::<f64>() < self.p {
            x
        } else {
            let y = rng.gen_range(0..self.k - 1);
            if y >= x {
                y + 1
            } else {
                y
            }
        }
    }
}

/// Subset selection over `[k]`: a size-ω subset containing the truth with
/// probability `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubsetSelection {
    pub params: SsBlockParams,
}

impl SubsetSelection {
    pub fn new(k: usize, eps: f64) -> Result<Self> {
        check_domain(k, eps)?;
        Ok(SubsetSelection { params: SsBlockParams::new(k, eps)? })
    }

    pub fn k(&self) -> usize {
        self.params.m
    }

    pub fn perturb<R: Rng + ?Sized>(&self, x: usize, rng: &mut R, sampler: &mut SubsetSampler) -> Vec<u32> {
        let mut z = Vec::with_capacity(self.params.omega);
        ss_kernel(&self.params, x, rng, sampler, &mut z);
        z
    }
}

/// The SS randomizer on `[m]` seeded with residue `r`. Output is sorted.
pub(crate) fn ss_kernel<R: Rng + ?Sized>(
    block: &SsBlockParams,
    r: usize,
    rng: &mut R,
    sampler: &mut SubsetSampler,
    out: &mut Vec<u32>,
) {
    out.clear();
    if rng.gen::<f64>() < block.p {
        out.push(r as u32);
        sampler.sample_excluding(block.m, r, block.omega - 1, rng, out);
    } else {
        sampler.sample_excluding(block.m, r, block.omega, rng, out);
    }
    out.sort_unstable();
}

/// Optimal unary encoding: bit `x` kept with probability 1/2, every other
/// bit set with probability `1/(e^ε + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Oue {
    pub k: usize,
    pub eps: f64,
    pub p: f64,
    pub q: f64,
}

impl Oue {
    pub fn new(k: usize, eps: f64) -> Result<Self> {
        check_domain(k, eps)?;
        let inv = (-eps).exp();
        Ok(Oue { k, eps, p: 0.5, q: inv / (1.0 + inv) })
    }

    /// Sorted positions of the set bits.
    ///
    /// Off-target bits are drawn by geometric skipping, which is exact for
    /// independent Bernoulli(q) bits and costs `O(#ones)`.
    pub fn perturb<R: Rng + ?Sized>(&self, x: usize, rng: &mut R) -> Vec<u32> {
        debug_assert!(x < self.k);
        let mut ones = Vec::new();
        if rng.gen::<f64>() < self.p {
            ones.push(x as u32);
        }
        let others = self.k - 1;
        if self.q > 0.0 {
            let log_miss = (-self.q).ln_1p();
            let mut pos: usize = 0;
            loop {
                let u: f64 = 1.0 - rng.gen::<f64>();
                let gap = (u.ln() / log_miss).floor();
                if !gap.is_finite() || gap >= (others - pos) as f64 {
                    break;
                }
                pos += gap as usize;
                ones.push(if pos < x { pos } else { pos + 1 } as u32);
                pos += 1;
                if pos >= others {
                    break;
                }
            }
        }
        ones.sort_unstable();
        ones
    }
}

/// Modular subset selection: one uniformly chosen residue block, perturbed
/// by SS over `[m_J]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mss {
    pub moduli: ModuliSet,
}

impl Mss {
    pub fn new(moduli: ModuliSet) -> Self {
        Mss { moduli }
    }

    pub fn k(&self) -> usize {
        self.moduli.k()
    }

    pub fn perturb<R: Rng + ?Sized>(&self, x: usize, rng: &mut R, sampler: &mut SubsetSampler) -> MssReport {
        let mut z = Vec::new();
        let j = self.perturb_into(x, rng, sampler, &mut z);
        MssReport { j, z }
    }

    /// Writes the subset into `z` and returns the block index.
    pub fn perturb_into<R: Rng + ?Sized>(
        &self,
        x: usize,
        rng: &mut R,
        sampler: &mut SubsetSampler,
        z: &mut Vec<u32>,
    ) -> usize {
        debug_assert!(x < self.k());
        let j = rng.gen_range(0..self.moduli.ell());
        let block = self.moduli.block(j);
        ss_kernel(block, x % block.m, rng, sampler, z);
        j
    }
}

/// A configured mechanism.
#[derive(Debug, Clone, PartialEq)]
pub enum Mechanism {
    Grr(Grr),
    Ss(SubsetSelection),
    Oue(Oue),
    Mss(Mss),
}

/// One user's message.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Report {
    Grr(usize),
    Ss(Vec<u32>),
    /// Set-bit positions of the length-k vector.
    Oue(Vec<u32>),
    Mss(MssReport),
}

impl Mechanism {
    pub fn tag(&self) -> MechTag {
        match self {
            Mechanism::Grr(_) => MechTag::Grr,
            Mechanism::Ss(_) => MechTag::Ss,
            Mechanism::Oue(_) => MechTag::Oue,
            Mechanism::Mss(_) => MechTag::Mss,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            Mechanism::Grr(m) => m.k,
            Mechanism::Ss(m) => m.k(),
            Mechanism::Oue(m) => m.k,
            Mechanism::Mss(m) => m.k(),
        }
    }

    pub fn perturb<R: Rng + ?Sized>(&self, x: usize, rng: &mut R, sampler: &mut SubsetSampler) -> Report {
        match self {
            Mechanism::Grr(m) => Report::Grr(m.perturb(x, rng)),
            Mechanism::Ss(m) => Report::Ss(m.perturb(x, rng, sampler)),
            Mechanism::Oue(m) => Report::Oue(m.perturb(x, rng)),
            Mechanism::Mss(m) => Report::Mss(m.perturb(x, rng, sampler)),
        }
    }
}

fn check_domain(k: usize, eps: f64) -> Result<()> {
    if k < 2 {
        return Err(MssError::invalid(format!("domain size {k} < 2")));
    }
    if !(eps >= 0.0) || eps.is_nan() {
        return Err(MssError::invalid(format!("privacy budget {eps} must be >= 0")));
    }
    Ok(())
}

fn debias(counts: &[u64], n: u64, p: f64, q: f64) -> Result<Histogram> {
    if n == 0 {
        return Err(MssError::invalid("no reports (n = 0)"));
    }
    let n = n as f64;
    Ok(Histogram::estimate(
        counts.iter().map(|&c| (c as f64 / n - q) / (p - q)).collect(),
    ))
}

/// Unbiased GRR estimate from per-symbol report counts.
pub fn grr_estimate(counts: &[u64], eps: f64, n: u64) -> Result<Histogram> {
    let grr = Grr::new(counts.len(), eps)?;
    debias(counts, n, grr.p, grr.q)
}

/// Unbiased SS estimate from per-value membership counts.
pub fn ss_estimate(counts: &[u64], eps: f64, n: u64) -> Result<Histogram> {
    let ss = SubsetSelection::new(counts.len(), eps)?;
    debias(counts, n, ss.params.p, ss.params.q)
}

/// Unbiased OUE estimate from per-position bit sums.
pub fn oue_estimate(counts: &[u64], eps: f64, n: u64) -> Result<Histogram> {
    let oue = Oue::new(counts.len(), eps)?;
    debias(counts, n, oue.p, oue.q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn within_3sigma(hits: u64, trials: u64, p: f64) -> bool {
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        (hits as f64 - trials as f64 * p).abs() <= 3.0 * sd.max(1e-12)
    }

    #[test]
    fn grr_limits_and_rate() {
        let mut rng = stream(10, &[]);
        let g = Grr::new(5, 60.0).unwrap();
        assert!((0..1000).all(|_| g.perturb(3, &mut rng) == 3));

        let g = Grr::new(2, 0.0).unwrap();
        assert!((g.p - 0.5).abs() < 1e-15);

        let g = Grr::new(4, 3f64.ln()).unwrap();
        assert!((g.p - 0.5).abs() < 1e-12);
        let trials = 1_000_000;
        let hits = (0..trials).filter(|_| g.perturb(1, &mut rng) == 1).count() as u64;
        assert!(within_3sigma(hits, trials, 0.5), "{hits}");
    }

    #[test]
    fn ss_size_and_rates() {
        let mut rng = stream(11, &[]);
        let mut sampler = SubsetSampler::new();
        let ss = SubsetSelection::new(4, 0.01).unwrap();
        assert_eq!(ss.params.omega, 2);
        for _ in 0..100 {
            assert_eq!(ss.perturb(1, &mut rng, &mut sampler).len(), 2);
        }
        let ss = SubsetSelection::new(2, 0.0).unwrap();
        assert_eq!(ss.params.omega, 1);

        let ss = SubsetSelection::new(5, 4f64.ln()).unwrap();
        assert_eq!(ss.params.omega, 1);
        let trials = 200_000u64;
        let mut truth = 0u64;
        let mut other = 0u64;
        for _ in 0..trials {
            let z = ss.perturb(2, &mut rng, &mut sampler);
            assert_eq!(z.len(), 1);
            truth += z.contains(&2) as u64;
            other += z.contains(&4) as u64;
        }
        assert!(within_3sigma(truth, trials, 0.5));
        assert!(within_3sigma(other, trials, ss.params.q));
    }

    #[test]
    fn ss_marginal_is_pi_for_point_mass_complement() {
        // For a ≠ x, P[a ∈ Z] = q; the prior-free marginal π averages p and q.
        let mut rng = stream(12, &[]);
        let mut sampler = SubsetSampler::new();
        let ss = SubsetSelection::new(9, 1.0).unwrap();
        let trials = 200_000u64;
        let mut hit_any = 0u64;
        for t in 0..trials {
            let x = (t % 9) as usize;
            let z = ss.perturb(x, &mut rng, &mut sampler);
            hit_any += z.contains(&4) as u64;
        }
        assert!(within_3sigma(hit_any, trials, ss.params.pi));
    }

    #[test]
    fn mss_block_choice_and_inclusion() {
        let moduli = ModuliSet::new(vec![3, 5], 6, 4f64.ln()).unwrap();
        assert!((moduli.block(0).p - 2.0 / 3.0).abs() < 1e-12);
        assert!((moduli.block(1).p - 0.5).abs() < 1e-12);
        let mss = Mss::new(moduli);
        let mut rng = stream(13, &[]);
        let mut sampler = SubsetSampler::new();
        let trials = 200_000u64;
        let mut per_block = [0u64; 2];
        let mut truth = [0u64; 2];
        // x = 5 has residues (2, 0)
        for _ in 0..trials {
            let rep = mss.perturb(5, &mut rng, &mut sampler);
            per_block[rep.j] += 1;
            let r = [2u32, 0][rep.j];
            truth[rep.j] += rep.z.contains(&r) as u64;
        }
        assert!(within_3sigma(per_block[0], trials, 0.5));
        assert!(within_3sigma(truth[0], per_block[0], 2.0 / 3.0));
        assert!(within_3sigma(truth[1], per_block[1], 0.5));
    }

    #[test]
    fn oue_rates() {
        let mut rng = stream(14, &[]);
        let oue = Oue::new(2, 3f64.ln()).unwrap();
        assert!((oue.q - 0.25).abs() < 1e-12);
        let trials = 400_000u64;
        let mut own = 0u64;
        let mut other = 0u64;
        for _ in 0..trials {
            let ones = oue.perturb(0, &mut rng);
            own += ones.contains(&0) as u64;
            other += ones.contains(&1) as u64;
        }
        assert!(within_3sigma(own, trials, 0.5));
        assert!(within_3sigma(other, trials, 0.25));

        let oue = Oue::new(50, 80.0).unwrap();
        for _ in 0..100 {
            assert!(oue.perturb(7, &mut rng).iter().all(|&b| b == 7));
        }
    }

    #[test]
    fn oue_geometric_skipping_is_bernoulli_per_position() {
        let mut rng = stream(15, &[]);
        let oue = Oue::new(12, 1.0).unwrap();
        let trials = 200_000u64;
        let mut hits = [0u64; 12];
        for _ in 0..trials {
            for b in oue.perturb(5, &mut rng) {
                hits[b as usize] += 1;
            }
        }
        for (a, &h) in hits.iter().enumerate() {
            let p = if a == 5 { 0.5 } else { oue.q };
            assert!(within_3sigma(h, trials, p), "position {a}: {h}");
        }
    }

    #[test]
    fn estimators_debias() {
        // noiseless limit
        let counts = [30u64, 50, 20];
        let est = grr_estimate(&counts, 60.0, 100).unwrap();
        for (e, c) in est.as_slice().iter().zip(counts) {
            assert!((e - c as f64 / 100.0).abs() < 1e-9);
        }
        // ȳ = q -> 0
        let ss = SubsetSelection::new(8, 1.0).unwrap();
        let n = 1_000_000u64;
        let c = (ss.params.q * n as f64).round() as u64;
        let est = ss_estimate(&[c; 8], 1.0, n).unwrap();
        assert!(est.as_slice().iter().all(|v| v.abs() < 1e-5));
        assert!(grr_estimate(&counts, 1.0, 0).is_err());
    }

    #[test]
    fn grr_estimate_sums_to_one() {
        let counts = [13u64, 7, 0, 40, 1];
        let n: u64 = counts.iter().sum();
        let est = grr_estimate(&counts, 0.7, n).unwrap();
        assert!((est.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tag_parsing() {
        for t in MechTag::ALL {
            assert_eq!(t.as_str().parse::<MechTag>().unwrap(), t);
        }
        assert!("pgr".parse::<MechTag>().is_err());
    }
}
