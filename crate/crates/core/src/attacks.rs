//! Single-message Bayesian reconstruction attack (DRA) rates.
//!
//! The attacker sees one report, assumes a uniform prior and guesses
//! uniformly over the values consistent with it.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Discrete, Hypergeometric};

use crate::domain::{Dataset, ModuliSet};
use crate::error::{MssError, Result};
use crate::mechanisms::{Grr, Mechanism, Report, SubsetSampler, SubsetSelection};
use crate::primes::is_prime;
use crate::rng::{label, substream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DraEstimate {
    pub analytic: Option<f64>,
    pub empirical: f64,
    /// Number of attacked reports.
    pub trials: u64,
    pub stderr: f64,
}

impl DraEstimate {
    pub fn from_hits(hits: u64, trials: u64, analytic: Option<f64>) -> Self {
        let r = if trials == 0 { 0.0 } else { hits as f64 / trials as f64 };
        let stderr = if trials == 0 { 0.0 } else { (r * (1.0 - r) / trials as f64).sqrt() };
        DraEstimate { analytic, empirical: r, trials, stderr }
    }
}

/// Number of values in `[k]` with each residue mod `m`.
pub fn residue_multiplicity(k: usize, m: usize) -> Vec<usize> {
    assert!(m >= 1, "modulus must be positive");
    let (e, r) = (k / m, k % m);
    (0..m).map(|z| if z < r { e + 1 } else { e }).collect()
}

fn check(k: usize, eps: f64) -> Result<()> {
    if k < 2 {
        return Err(MssError::invalid(format!("domain size {k} < 2")));
    }
    if !(eps >= 0.0) || eps.is_nan() {
        return Err(MssError::invalid(format!("privacy budget {eps} must be >= 0")));
    }
    Ok(())
}

/// `e^ε/(e^ε + k − 1)`.
pub fn dra_grr(k: usize, eps: f64) -> Result<f64> {
    check(k, eps)?;
    Ok(Grr::new(k, eps)?.p)
}

/// `e^ε/(ωe^ε + k − ω)`.
pub fn dra_ss(k: usize, eps: f64) -> Result<f64> {
    check(k, eps)?;
    let b = SubsetSelection::new(k, eps)?.params;
    Ok(b.p / b.omega as f64)
}

/// Symmetric RAPPOR:
/// `(1/k)[e^{ε/2} − e^{(k−1)ε/2}(e^{ε/2} − 1)/(e^{ε/2} + 1)^{k−1}]`.
pub fn dra_rappor_symmetric(k: usize, eps: f64) -> Result<f64> {
    check(k, eps)?;
    let h = eps / 2.0;
    let km1 = (k - 1) as f64;
    let tail = if eps == 0.0 {
        0.0
    } else {
        (km1 * h + h.exp_m1().ln() - km1 * h.exp().ln_1p()).exp()
    };
    Ok((h.exp() - tail) / k as f64)
}

/// Closed form `(1/ℓ)Σ_j p_j/(ω_j⌈k/m_j⌉)`.
///
/// Every posterior support has at most `ω_j⌈k/m_j⌉` elements, so by convexity
/// of `1/x` this never exceeds [`dra_mss_exact`] when all `m_j ≤ k`; the two
/// agree when every `m_j` divides `k`.
pub fn dra_mss_upper(moduli: &ModuliSet) -> f64 {
    let k = moduli.k();
    let total: f64 =
        moduli.blocks().iter().map(|b| b.p / (b.omega as f64 * k.div_ceil(b.m) as f64)).sum();
    total / moduli.ell() as f64
}

/// `E[1/(c + h)]` with `h ~ Hypergeometric(population, successes, draws)`.
fn inverse_mean(c: f64, population: u64, successes: u64, draws: u64) -> f64 {
    if successes == 0 || draws == 0 {
        return 1.0 / c;
    }
    if successes == population {
        return 1.0 / (c + draws as f64);
    }
    let hyp = Hypergeometric::new(population, successes, draws).expect("valid hypergeometric");
    let lo = (draws + successes).saturating_sub(population);
    let hi = draws.min(successes);
    (lo..=hi).map(|h| hyp.pmf(h) / (c + h as f64)).sum()
}

/// Exact expected success rate for a uniformly distributed input.
///
/// Within a block the filler residues are a uniform `(ω−1)`-subset of the
/// other residues, whose multiplicities take only the values `e` and `e+1`;
/// the number of `e+1` residues drawn is hypergeometric, so the expectation
/// is a finite sum. When some `m_j > k` a report can have empty support, in
/// which case the attacker guesses uniformly over `[k]`; that term is
/// included.
pub fn dra_mss_exact(moduli: &ModuliSet) -> f64 {
    let k = moduli.k();
    let kf = k as f64;
    let mut total = 0.0;
    for b in moduli.blocks() {
        let (m, w) = (b.m, b.omega);
        let (e, r) = (k / m, k % m);
        let mut hit = 0.0;
        // residues z < r have n_z = e + 1, the rest e
        for (count, n_z, big_others) in [(r, e + 1, r.saturating_sub(1)), (m - r, e, r)] {
            if count == 0 || n_z == 0 {
                continue;
            }
            let c = n_z as f64 + (w - 1) as f64 * e as f64;
            let inv = inverse_mean(c, (m - 1) as u64, big_others as u64, (w - 1) as u64);
            hit += count as f64 * n_z as f64 / kf * inv;
        }
        let mut rate = b.p * hit;
        if m > k {
            // every true residue is < k, so the m − k empty residues are all "others"
            let empty = (m - k) as u64;
            let all_empty = Hypergeometric::new((m - 1) as u64, empty, w as u64)
                .map(|h| h.pmf(w as u64))
                .unwrap_or(0.0);
            rate += (1.0 - b.p) * all_empty / kf;
        }
        total += rate;
    }
    total / moduli.ell() as f64
}

fn prime_power_base(q: u64) -> Option<u64> {
    if q < 2 {
        return None;
    }
    let p = (2..).take_while(|d| d * d <= q).find(|d| q % d == 0).unwrap_or(q);
    let mut rest = q;
    while rest % p == 0 {
        rest /= p;
    }
    (rest == 1 && is_prime(p)).then_some(p)
}

/// Projective-geometry response on the full (untruncated) domain:
/// `e^ε/(K + (e^ε − 1)c)`, `K = (q^t − 1)/(q − 1)`, `c = (q^{t−1} − 1)/(q − 1)`.
pub fn dra_pgr_full(q: u64, t: u32, eps: f64) -> Result<f64> {
    if prime_power_base(q).is_none() {
        return Err(MssError::invalid(format!("q = {q} is not a prime power")));
    }
    if t < 2 {
        return Err(MssError::invalid("t must be >= 2"));
    }
    if !(eps >= 0.0) || eps.is_nan() {
        return Err(MssError::invalid(format!("privacy budget {eps} must be >= 0")));
    }
    let qf = q as f64;
    let big_k = (qf.powi(t as i32) - 1.0) / (qf - 1.0);
    let c = (qf.powi(t as i32 - 1) - 1.0) / (qf - 1.0);
    let e = eps.exp();
    Ok(e / (big_k + (e - 1.0) * c))
}

/// The closed-form rate for a configured mechanism; `None` for OUE.
pub fn dra_analytic(mech: &Mechanism) -> Option<f64> {
    match mech {
        Mechanism::Grr(g) => Some(g.p),
        Mechanism::Ss(s) => Some(s.params.p / s.params.omega as f64),
        Mechanism::Oue(_) => None,
        Mechanism::Mss(m) => Some(dra_mss_exact(&m.moduli)),
    }
}

/// One guess of the attacker for `report`.
pub fn attack_guess<R: Rng + ?Sized>(mech: &Mechanism, report: &Report, rng: &mut R) -> usize {
    let k = mech.k();
    match (mech, report) {
        (Mechanism::Grr(_), Report::Grr(y)) => *y,
        (Mechanism::Ss(_), Report::Ss(z)) | (Mechanism::Oue(_), Report::Oue(z)) => {
            if z.is_empty() {
                rng.gen_range(0..k)
            } else {
                z[rng.gen_range(0..z.len())] as usize
            }
        }
        (Mechanism::Mss(m), Report::Mss(rep)) => {
            let modulus = m.moduli.block(rep.j).m;
            let size = |z: u32| (k + modulus - 1 - z as usize) / modulus;
            let support: usize = rep.z.iter().map(|&z| size(z)).sum();
            if support == 0 {
                return rng.gen_range(0..k);
            }
            let mut u = rng.gen_range(0..support);
            for &z in &rep.z {
                let s = size(z);
                if u < s {
                    return z as usize + u * modulus;
                }
                u -= s;
            }
            unreachable!("index within support")
        }
        _ => panic!("report does not match mechanism"),
    }
}

/// Perturbs every record of `data` once per trial and attacks each report.
///
/// Trials run in parallel on independent substreams of `seed`.
pub fn empirical_dra(mech: &Mechanism, data: &Dataset, trials: u64, seed: u64) -> Result<DraEstimate> {
    if trials == 0 {
        return Err(MssError::invalid("trials must be >= 1"));
    }
    if data.k() != mech.k() {
        return Err(MssError::DimensionMismatch { expected: mech.k(), got: data.k() });
    }
    if data.n() == 0 {
        return Err(MssError::NoData);
    }
    let root = [label("dra"), label(mech.tag().as_str())];
    let hits: u64 = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(seed, &root, t);
            let mut sampler = SubsetSampler::new();
            let mut hits = 0u64;
            for &x in data.values() {
                let report = mech.perturb(x, &mut rng, &mut sampler);
                hits += u64::from(attack_guess(mech, &report, &mut rng) == x);
            }
            hits
        })
        .sum();
    Ok(DraEstimate::from_hits(hits, trials * data.n() as u64, dra_analytic(mech)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mechanisms::{Mss, Oue};

    fn binom(n: usize, r: usize) -> f64 {
        if r > n {
            return 0.0;
        }
        (0..r).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
    }

    fn subsets(m: usize, w: usize) -> Vec<Vec<usize>> {
        (0u64..1 << m)
            .filter(|s| s.count_ones() as usize == w)
            .map(|s| (0..m).filter(|i| s >> i & 1 == 1).collect())
            .collect()
    }

    /// Success probability of the uniform-support attacker, by enumerating
    /// every input, block and reported subset.
    fn brute_force(moduli: &ModuliSet) -> f64 {
        let k = moduli.k();
        let mut total = 0.0;
        for x in 0..k {
            for b in moduli.blocks() {
                let (m, w) = (b.m, b.omega);
                let r = x % m;
                for z in subsets(m, w) {
                    let prob = if z.contains(&r) {
                        b.p / binom(m - 1, w - 1)
                    } else {
                        (1.0 - b.p) / binom(m - 1, w)
                    };
                    let support: Vec<usize> = (0..k).filter(|v| z.contains(&(v % m))).collect();
                    let success = if support.is_empty() {
                        1.0 / k as f64
                    } else if support.contains(&x) {
                        1.0 / support.len() as f64
                    } else {
                        0.0
                    };
                    total += prob * success;
                }
            }
        }
        total / (k * moduli.ell()) as f64
    }

    #[test]
    fn multiplicity() {
        assert_eq!(residue_multiplicity(10, 3), vec![4, 3, 3]);
        assert_eq!(residue_multiplicity(15, 5), vec![3; 5]);
        assert_eq!(residue_multiplicity(3, 7), vec![1, 1, 1, 0, 0, 0, 0]);
        for (k, m) in [(1, 1), (97, 13), (1000, 37), (5, 9)] {
            let n = residue_multiplicity(k, m);
            assert_eq!(n.iter().sum::<usize>(), k);
            for (z, &c) in n.iter().enumerate() {
                assert_eq!(c, (0..k).filter(|x| x % m == z).count());
            }
        }
    }

    #[test]
    fn baseline_examples() {
        assert!((dra_grr(10, 0.0).unwrap() - 0.1).abs() < 1e-15);
        assert!((dra_grr(10, 60.0).unwrap() - 1.0).abs() < 1e-12);
        assert!((dra_ss(100, 4f64.ln()).unwrap() - 0.025).abs() < 1e-12);
        assert!((dra_rappor_symmetric(50, 0.0).unwrap() - 0.02).abs() < 1e-15);
        let v = dra_rappor_symmetric(1024, 3.0).unwrap();
        assert!(v.is_finite() && v > 0.0 && v < 1.0);
        assert!(dra_grr(1, 1.0).is_err());
    }

    #[test]
    fn rappor_matches_direct_evaluation() {
        for (k, eps) in [(2, 1.0), (5, 2.0), (20, 0.5), (30, 4.0)] {
            let h: f64 = eps / 2.0;
            let direct = (h.exp()
                - ((k - 1) as f64 * h).exp() * (h.exp() - 1.0) / (h.exp() + 1.0).powi(k as i32 - 1))
                / k as f64;
            let v = dra_rappor_symmetric(k, eps).unwrap();
            assert!((v - direct).abs() < 1e-12 * direct.abs().max(1.0), "{k} {eps}: {v} vs {direct}");
        }
    }

    #[test]
    fn mss_upper_example() {
        let m = ModuliSet::covering(vec![3, 5], 15, 4f64.ln()).unwrap();
        assert!((dra_mss_upper(&m) - 0.15).abs() < 1e-12);
        assert!((dra_mss_exact(&m) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn single_block_reduces_to_ss() {
        for (k, eps) in [(10, 1.0), (100, 4f64.ln()), (37, 2.5)] {
            let m = ModuliSet::new(vec![k], k, eps).unwrap();
            let ss = dra_ss(k, eps).unwrap();
            assert!((dra_mss_upper(&m) - ss).abs() < 1e-14);
            assert!((dra_mss_exact(&m) - ss).abs() < 1e-14);
        }
    }

    #[test]
    fn singleton_subsets() {
        // large budget gives omega = 1 in every block
        let eps = 6.0;
        let m = ModuliSet::covering(vec![3, 5, 7], 20, eps).unwrap();
        assert!(m.blocks().iter().all(|b| b.omega == 1));
        let expected: f64 = m.blocks().iter().map(|b| b.p * b.m as f64).sum::<f64>() / (3.0 * 20.0);
        assert!((dra_mss_exact(&m) - expected).abs() < 1e-14);
    }

    #[test]
    fn exact_matches_brute_force() {
        let cases = [
            (vec![3, 5], 10, 4f64.ln()),
            (vec![3, 5], 15, 4f64.ln()),
            (vec![5, 7], 23, 1.0),
            (vec![3, 5, 7], 17, 0.5),
            (vec![7, 11], 10, 0.3),
            (vec![11, 13], 9, 1.5),
        ];
        for (mods, k, eps) in cases {
            let m = ModuliSet::covering(mods.clone(), k, eps).unwrap();
            let exact = dra_mss_exact(&m);
            let brute = brute_force(&m);
            assert!((exact - brute).abs() < 1e-10, "{mods:?} k={k}: {exact} vs {brute}");
            if mods.iter().all(|&q| q <= k) {
                assert!(dra_mss_upper(&m) <= exact + 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_equality_iff_divisible() {
        let m = ModuliSet::covering(vec![5, 7], 35, 1.0).unwrap();
        assert!((dra_mss_exact(&m) - dra_mss_upper(&m)).abs() < 1e-14);
        let m = ModuliSet::new(vec![31, 37, 41], 100, 1.0).unwrap();
        assert!(dra_mss_exact(&m) > dra_mss_upper(&m) + 1e-9);
    }

    #[test]
    fn pgr_examples() {
        assert!((dra_pgr_full(2, 3, 2f64.ln()).unwrap() - 0.2).abs() < 1e-12);
        assert!((dra_pgr_full(3, 4, 0.0).unwrap() - 1.0 / 40.0).abs() < 1e-14);
        let e = 2f64.exp();
        assert!((dra_pgr_full(9, 2, 2.0).unwrap() - e / (9.0 + e)).abs() < 1e-12);
        assert!(dra_pgr_full(6, 2, 1.0).is_err());
        assert!(dra_pgr_full(4, 1, 1.0).is_err());
        assert_eq!(prime_power_base(8), Some(2));
        assert_eq!(prime_power_base(49), Some(7));
        assert_eq!(prime_power_base(12), None);
    }

    #[test]
    fn analytic_rates_are_monotone_in_eps() {
        let mut grid: Vec<f64> = (1..=100).map(|i| i as f64 * 0.08).collect();
        grid.insert(0, 0.0);
        let mods = [vec![7, 11, 13], vec![3, 5]];
        for w in grid.windows(2) {
            let (a, b) = (w[0], w[1]);
            for k in [10, 100, 1024] {
                assert!(dra_grr(k, a).unwrap() <= dra_grr(k, b).unwrap());
                assert!(dra_ss(k, a).unwrap() <= dra_ss(k, b).unwrap() + 1e-15, "ss k={k} eps={b}");
                assert!(dra_rappor_symmetric(k, a).unwrap() <= dra_rappor_symmetric(k, b).unwrap() + 1e-15);
            }
            if a > 0.0 {
                for (ms, k) in mods.iter().zip([100, 15]) {
                    let ma = ModuliSet::covering(ms.clone(), k, a).unwrap();
                    let mb = ModuliSet::covering(ms.clone(), k, b).unwrap();
                    assert!(dra_mss_exact(&ma) <= dra_mss_exact(&mb) + 1e-15, "{ms:?} eps={b}");
                    assert!(dra_mss_upper(&ma) <= dra_mss_upper(&mb) + 1e-15);
                }
            }
        }
    }

    fn uniform_data(k: usize, reps: usize) -> Dataset {
        Dataset::new(k, (0..k * reps).map(|i| i % k).collect()).unwrap()
    }

    #[test]
    fn empirical_ss_and_mss_match_analytic() {
        let eps = 4f64.ln();
        let data = uniform_data(100, 50);
        let ss = empirical_dra(&Mechanism::Ss(SubsetSelection::new(100, eps).unwrap()), &data, 20, 1).unwrap();
        assert_eq!(ss.trials, 100_000);
        assert!((ss.empirical - 0.025).abs() <= 3.0 * ss.stderr, "{ss:?}");

        let m = ModuliSet::new(vec![31, 37, 41], 100, eps).unwrap();
        let est = empirical_dra(&Mechanism::Mss(Mss::new(m.clone())), &data, 20, 2).unwrap();
        let exact = dra_mss_exact(&m);
        assert_eq!(est.analytic, Some(exact));
        assert!((est.empirical - exact).abs() <= 3.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn empirical_includes_empty_support_fallback() {
        let m = ModuliSet::covering(vec![7, 11], 5, 0.2).unwrap();
        let data = uniform_data(5, 2000);
        let est = empirical_dra(&Mechanism::Mss(Mss::new(m.clone())), &data, 20, 3).unwrap();
        let brute = brute_force(&m);
        assert!((est.empirical - brute).abs() <= 3.0 * est.stderr, "{est:?} vs {brute}");
    }

    #[test]
    fn grr_limit_and_oue() {
        let data = uniform_data(10, 100);
        let g = empirical_dra(&Mechanism::Grr(Grr::new(10, 50.0).unwrap()), &data, 5, 4).unwrap();
        assert!(g.empirical > 0.999);
        let o = empirical_dra(&Mechanism::Oue(Oue::new(10, 1.0).unwrap()), &data, 5, 4).unwrap();
        assert!(o.analytic.is_none());
        assert!(o.empirical > 0.0 && o.empirical < 1.0);
        assert!((o.stderr - (o.empirical * (1.0 - o.empirical) / 5000.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn empirical_is_deterministic() {
        let m = ModuliSet::new(vec![31, 37, 41], 100, 1.0).unwrap();
        let mech = Mechanism::Mss(Mss::new(m));
        let data = uniform_data(100, 3);
        assert_eq!(empirical_dra(&mech, &data, 4, 9).unwrap(), empirical_dra(&mech, &data, 4, 9).unwrap());
    }
}
