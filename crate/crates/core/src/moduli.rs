//! Search for pairwise-coprime prime moduli with a well-conditioned design.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decoder::{analytic_mse_full_rank, apply_weights, build_design, MseOptions};
use crate::domain::{Histogram, ModuliSet};
use crate::error::{MssError, Result};
use crate::primes::{next_prime, prime_at_least, primes_in_band};
use crate::rng::{label, stream};
use crate::sparse::cond_with_limit;

/// Population size used to rank candidates by analytic MSE.
pub const REFERENCE_N: f64 = 1e4;
const RANKING_PROBES: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuliSearchConfig {
    pub kappa_max: f64,
    pub ell_max: usize,
    pub beta: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ModuliSearchConfig {
    fn default() -> Self {
        Self { kappa_max: 10.0, ell_max: 20, beta: 20.0, trials: 1000, seed: 0 }
    }
}

impl ModuliSearchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_max > 1.0) {
            return Err(MssError::invalid("kappa_max must be > 1"));
        }
        if self.ell_max < 2 {
            return Err(MssError::invalid("ell_max must be >= 2"));
        }
        if !(self.beta > 1.0) || !self.beta.is_finite() {
            return Err(MssError::invalid("beta must be finite and > 1"));
        }
        if self.trials < 1 {
            return Err(MssError::invalid("trials must be >= 1"));
        }
        Ok(())
    }

    /// Stable 64-bit digest, used as part of cache keys.
    pub fn digest(&self) -> u64 {
        label(&format!(
            "kappa_max={:?};ell_max={};beta={:?};trials={};seed={}",
            self.kappa_max, self.ell_max, self.beta, self.trials, self.seed
        ))
    }
}

/// Maximum number of moduli on which two distinct values in `[k]` can
/// collide: `⌈ln k / ln(k/(βℓ))⌉`.
pub fn t_star(k: usize, beta: f64, ell: usize) -> Result<u32> {
    let lower = k as f64 / (beta * ell as f64);
    if !(lower > 1.0) {
        return Err(MssError::UndefinedBound(format!("k/(beta*ell) = {lower} <= 1")));
    }
    Ok(((k as f64).ln() / lower.ln()).ceil() as u32)
}

/// Weight-ratio bound `(β + e^ε)/(1/β + e^ε)`.
pub fn alpha_bound(beta: f64, eps: f64) -> Result<f64> {
    if !(beta > 1.0) {
        return Err(MssError::UndefinedBound(format!("beta = {beta} <= 1")));
    }
    let e = eps.exp();
    Ok((beta + e) / (1.0 / beta + e))
}

/// `α(ℓ + T*)/(ℓ − T*)`, or `∞` when `ℓ ≤ T*`.
pub fn kappa_bound(ell: usize, t_star: u32, alpha: f64) -> f64 {
    let (l, t) = (ell as f64, t_star as f64);
    if l <= t {
        f64::INFINITY
    } else {
        alpha * (l + t) / (l - t)
    }
}

/// Condition number of the weighted design under planning weights
/// (`n_j = 1` for every block). Stops early once it provably exceeds `limit`.
pub fn planning_kappa(moduli: &ModuliSet, limit: f64) -> f64 {
    let design = apply_weights(&build_design(moduli), &vec![1.0; moduli.ell()])
        .expect("unit block counts are valid");
    cond_with_limit(design.matrix(), limit)
}

fn covers(moduli: &[u64], k: usize) -> bool {
    let mut product = 1u128;
    for &m in moduli {
        product = product.saturating_mul(m as u128);
    }
    let rank: u64 = moduli.iter().map(|m| m - 1).sum();
    product >= k as u128 && rank >= k as u64
}

/// Replaces `moduli[j]` by the next prime not already in the tuple.
fn bump(moduli: &mut [u64], j: usize) {
    let mut p = next_prime(moduli[j]);
    while moduli.contains(&p) {
        p = next_prime(p);
    }
    moduli[j] = p;
}

/// Smallest integer `r` with `r^ℓ ≥ k`.
fn ceil_root(k: usize, ell: usize) -> u64 {
    let mut r = (k as f64).powf(1.0 / ell as f64).floor().max(1.0) as u64;
    let reaches = |r: u64| (r as u128).checked_pow(ell as u32).map_or(true, |v| v >= k as u128);
    while r > 1 && reaches(r - 1) {
        r -= 1;
    }
    while !reaches(r) {
        r += 1;
    }
    r
}

/// How a candidate tuple was found.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Origin {
    Sampled { trial: usize },
    Fallback,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Found {
    pub moduli: ModuliSet,
    pub kappa: f64,
    pub origin: Origin,
}

fn to_set(m: &[u64], k: usize, eps: f64) -> Result<ModuliSet> {
    let mut v: Vec<usize> = m.iter().map(|&x| x as usize).collect();
    v.sort_unstable();
    ModuliSet::new(v, k, eps)
}

/// Randomized search for `ell` primes with `κ(A_w) ≤ kappa_max`, with the
/// deterministic fallback when every trial fails.
///
/// Returns `None` when the band holds fewer than `ell` primes or when
/// neither the trials nor the fallback reach the target.
pub fn find_valid_moduli(k: usize, ell: usize, cfg: &ModuliSearchConfig, eps: f64) -> Result<Option<Found>> {
    cfg.validate()?;
    if ell < 2 {
        return Err(MssError::invalid("ell must be >= 2"));
    }
    if k < 2 {
        return Err(MssError::invalid("domain size must be >= 2"));
    }
    let lo = k as f64 / (cfg.beta * ell as f64);
    let hi = (cfg.beta * k as f64 / ell as f64).min(0.95 * k as f64);
    let band = primes_in_band(lo, hi);
    if band.len() < ell {
        return Ok(None);
    }
    let mut rng = stream(cfg.seed, &[label("moduli"), k as u64, ell as u64]);
    let mut m = vec![0u64; ell];
    for trial in 0..cfg.trials {
        for (slot, i) in m.iter_mut().zip(sample(&mut rng, band.len(), ell)) {
            *slot = band[i];
        }
        while !covers(&m, k) {
            let j = rng.gen_range(0..ell);
            bump(&mut m, j);
        }
        let set = to_set(&m, k, eps)?;
        let kappa = planning_kappa(&set, cfg.kappa_max);
        if kappa <= cfg.kappa_max {
            return Ok(Some(Found { moduli: set, kappa, origin: Origin::Sampled { trial } }));
        }
    }

    let mut p = prime_at_least(ceil_root(k, ell));
    for slot in m.iter_mut() {
        *slot = p;
        p = next_prime(p);
    }
    let mut i = 0;
    while !covers(&m, k) {
        bump(&mut m, i);
        i = (i + 1) % ell;
    }
    let set = to_set(&m, k, eps)?;
    let kappa = planning_kappa(&set, cfg.kappa_max);
    Ok((kappa <= cfg.kappa_max).then_some(Found { moduli: set, kappa, origin: Origin::Fallback }))
}

/// One examined block count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub ell: usize,
    /// `None` when no tuple met the target for this `ℓ`.
    pub moduli: Option<Vec<usize>>,
    pub kappa: Option<f64>,
    pub analytic_mse: Option<f64>,
    pub origin: Option<Origin>,
}

#[derive(Debug, Clone)]
pub struct ModuliChoice {
    pub moduli: ModuliSet,
    pub kappa: f64,
    /// Analytic MSE at the uniform histogram and `n =` [`REFERENCE_N`], `λ = 0`.
    pub analytic_mse: f64,
    pub candidates: Vec<Candidate>,
}

/// The best tuple over `ℓ = 2..=ell_max` by analytic MSE.
///
/// For `k ≤ 3` no pair of primes satisfies the rank condition, so the
/// single modulus `m = smallest prime ≥ k` is returned (MSS reduces to SS).
pub fn choose_moduli(k: usize, eps: f64, cfg: &ModuliSearchConfig) -> Result<ModuliChoice> {
    cfg.validate()?;
    if k < 2 {
        return Err(MssError::invalid("domain size must be >= 2"));
    }
    if !(eps.is_finite() && eps > 0.0) {
        return Err(MssError::invalid(format!("privacy budget {eps} must be > 0")));
    }
    let uniform = Histogram::distribution(vec![1.0 / k as f64; k])?;
    // ranking only needs the trace to a couple of percent
    let rank_opts = MseOptions { seed: cfg.seed, min_probes: RANKING_PROBES, ..MseOptions::default() };
    if k <= 3 {
        let set = ModuliSet::new(vec![prime_at_least(k as u64) as usize], k, eps)?;
        let kappa = planning_kappa(&set, f64::INFINITY);
        let mse = analytic_mse_full_rank(&uniform, &set, REFERENCE_N, &rank_opts)?.value;
        let candidate = Candidate {
            ell: 1,
            moduli: Some(set.moduli().to_vec()),
            kappa: Some(kappa),
            analytic_mse: Some(mse),
            origin: None,
        };
        return Ok(ModuliChoice { moduli: set, kappa, analytic_mse: mse, candidates: vec![candidate] });
    }

    let evaluated: Vec<Result<(Candidate, Option<ModuliSet>)>> = (2..=cfg.ell_max)
        .into_par_iter()
        .map(|ell| {
            let found = find_valid_moduli(k, ell, cfg, eps)?;
            Ok(match found {
                None => (Candidate { ell, moduli: None, kappa: None, analytic_mse: None, origin: None }, None),
                Some(f) => {
                    let mse = analytic_mse_full_rank(&uniform, &f.moduli, REFERENCE_N, &rank_opts)?.value;
                    let c = Candidate {
                        ell,
                        moduli: Some(f.moduli.moduli().to_vec()),
                        kappa: Some(f.kappa),
                        analytic_mse: Some(mse),
                        origin: Some(f.origin),
                    };
                    (c, Some(f.moduli))
                }
            })
        })
        .collect();

    let mut candidates = Vec::new();
    let mut best: Option<(f64, f64, ModuliSet)> = None;
    for item in evaluated {
        let (c, set) = item?;
        if let (Some(set), Some(mse), Some(kappa)) = (set, c.analytic_mse, c.kappa) {
            if best.as_ref().map_or(true, |(b, _, _)| mse < *b) {
                best = Some((mse, kappa, set));
            }
        }
        candidates.push(c);
    }
    let (analytic_mse, kappa, moduli) = best.ok_or(MssError::SearchExhausted { k })?;
    Ok(ModuliChoice { moduli, kappa, analytic_mse, candidates })
}

/// Cached search result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CachedModuli {
    pub moduli: Vec<usize>,
    pub kappa: f64,
    pub analytic_mse: f64,
}

/// JSON sidecar mapping `(k, ε, config digest)` to search results.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModuliCache {
    entries: BTreeMap<String, CachedModuli>,
}

impl ModuliCache {
    /// Loads `path`, or an empty cache if the file does not exist.
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(text) => Ok(serde_json::from_str(&text)?),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(e.into()),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn key(k: usize, eps: f64, cfg: &ModuliSearchConfig) -> String {
        format!("k={k};eps={eps:?};cfg={:016x}", cfg.digest())
    }

    pub fn get(&self, k: usize, eps: f64, cfg: &ModuliSearchConfig) -> Option<&CachedModuli> {
        self.entries.get(&Self::key(k, eps, cfg))
    }

    pub fn insert(&mut self, k: usize, eps: f64, cfg: &ModuliSearchConfig, value: CachedModuli) {
        self.entries.insert(Self::key(k, eps, cfg), value);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// [`choose_moduli`] through an optional JSON cache file. Returns the set,
/// its planning κ and its reference analytic MSE.
pub fn choose_moduli_cached(
    k: usize,
    eps: f64,
    cfg: &ModuliSearchConfig,
    cache: Option<&Path>,
) -> Result<(ModuliSet, CachedModuli)> {
    let Some(path) = cache else {
        let c = choose_moduli(k, eps, cfg)?;
        let entry = CachedModuli { moduli: c.moduli.moduli().to_vec(), kappa: c.kappa, analytic_mse: c.analytic_mse };
        return Ok((c.moduli, entry));
    };
    let mut store = ModuliCache::load(path)?;
    if let Some(hit) = store.get(k, eps, cfg) {
        return Ok((ModuliSet::new(hit.moduli.clone(), k, eps)?, hit.clone()));
    }
    let c = choose_moduli(k, eps, cfg)?;
    let entry = CachedModuli { moduli: c.moduli.moduli().to_vec(), kappa: c.kappa, analytic_mse: c.analytic_mse };
    store.insert(k, eps, cfg, entry.clone());
    store.save(path)?;
    Ok((c.moduli, entry))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::validate_moduli;
    use nalgebra::DMatrix;

    fn dense_kappa(set: &ModuliSet) -> f64 {
        let d = apply_weights(&build_design(set), &vec![1.0; set.ell()]).unwrap();
        let a = d.matrix().to_dense();
        let sv = DMatrix::from_fn(a.len(), set.k(), |r, c| a[r][c]).singular_values();
        sv.max() / sv.min()
    }

    #[test]
    fn bound_examples() {
        assert_eq!(t_star(1000, 20.0, 5).unwrap(), 3);
        assert!((alpha_bound(20.0, 4f64.ln()).unwrap() - 24.0 / 4.05).abs() < 1e-12);
        assert!((alpha_bound(1.0 + 1e-9, 1.0).unwrap() - 1.0).abs() < 1e-8);
        assert!(alpha_bound(1.0, 1.0).is_err());
        assert!(matches!(t_star(100, 20.0, 5), Err(MssError::UndefinedBound(_))));
        assert_eq!(kappa_bound(3, 1, 1.0), 2.0);
        assert!((kappa_bound(10, 3, 24.0 / 4.05) - 24.0 / 4.05 * 13.0 / 7.0).abs() < 1e-12);
        assert_eq!(kappa_bound(3, 3, 1.0), f64::INFINITY);
        assert!((kappa_bound(1_000_000, 3, 2.0) - 2.0).abs() < 1e-4);
    }

    #[test]
    fn config_validation() {
        let bad = [
            ModuliSearchConfig { kappa_max: 1.0, ..Default::default() },
            ModuliSearchConfig { ell_max: 1, ..Default::default() },
            ModuliSearchConfig { beta: 1.0, ..Default::default() },
            ModuliSearchConfig { trials: 0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(cfg.validate().is_err());
        }
        assert_ne!(ModuliSearchConfig::default().digest(), ModuliSearchConfig { seed: 1, ..Default::default() }.digest());
    }

    #[test]
    fn ceil_roots() {
        assert_eq!(ceil_root(1000, 3), 10);
        assert_eq!(ceil_root(1001, 3), 11);
        assert_eq!(ceil_root(2, 20), 2);
        assert_eq!(ceil_root(1, 5), 1);
    }

    #[test]
    fn tiny_domain_pair() {
        let cfg = ModuliSearchConfig::default();
        let found = find_valid_moduli(4, 2, &cfg, 1.0).unwrap().unwrap();
        validate_moduli(found.moduli.moduli(), 4).unwrap();
        let dense = dense_kappa(&found.moduli);
        assert!((found.kappa - dense).abs() < 1e-6 * dense);
        assert!(found.kappa <= 10.0);
    }

    #[test]
    fn found_sets_are_valid_and_accurate() {
        let cfg = ModuliSearchConfig { trials: 200, ..Default::default() };
        for (k, ell) in [(100, 3), (300, 4), (1024, 2), (1024, 6)] {
            if let Some(f) = find_valid_moduli(k, ell, &cfg, 1.0).unwrap() {
                validate_moduli(f.moduli.moduli(), k).unwrap();
                assert!(f.kappa <= 10.0);
                let dense = dense_kappa(&f.moduli);
                assert!((f.kappa - dense).abs() <= 0.02 * dense, "k={k} ell={ell}: {} vs {dense}", f.kappa);
            }
        }
    }

    #[test]
    fn search_is_deterministic() {
        let cfg = ModuliSearchConfig { trials: 50, ..Default::default() };
        let a = choose_moduli(100, 1.0, &cfg).unwrap();
        let b = choose_moduli(100, 1.0, &cfg).unwrap();
        assert_eq!(a.moduli, b.moduli);
        assert_eq!(a.candidates, b.candidates);
    }

    #[test]
    fn choice_is_argmin_of_candidates() {
        let cfg = ModuliSearchConfig { trials: 100, ell_max: 8, ..Default::default() };
        let c = choose_moduli(100, 4f64.ln(), &cfg).unwrap();
        validate_moduli(c.moduli.moduli(), 100).unwrap();
        assert!(c.kappa <= 10.0);
        let mses: Vec<f64> = c.candidates.iter().filter_map(|x| x.analytic_mse).collect();
        assert!(!mses.is_empty());
        assert!(mses.iter().all(|&m| c.analytic_mse <= m));
    }

    #[test]
    fn degenerate_small_domains() {
        for k in [2, 3] {
            let c = choose_moduli(k, 1.0, &ModuliSearchConfig::default()).unwrap();
            assert_eq!(c.moduli.moduli(), &[k]);
            assert!((c.kappa - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fallback_satisfies_coverage_and_rank() {
        // one trial with an unreachable target forces the fallback path
        let cfg = ModuliSearchConfig { trials: 1, kappa_max: 1.0 + 1e-9, ..Default::default() };
        assert!(find_valid_moduli(200, 3, &cfg, 1.0).unwrap().is_none());
        let mut m = vec![0u64; 3];
        let mut p = prime_at_least(ceil_root(200, 3));
        for s in m.iter_mut() {
            *s = p;
            p = next_prime(p);
        }
        let mut i = 0;
        while !covers(&m, 200) {
            bump(&mut m, i);
            i = (i + 1) % 3;
        }
        let v: Vec<usize> = m.iter().map(|&x| x as usize).collect();
        validate_moduli(&v, 200).unwrap();
    }

    #[test]
    fn narrow_band_gives_none() {
        // k = 10, ell = 20: band [0.025, 9.5] holds 4 primes
        let cfg = ModuliSearchConfig::default();
        assert!(find_valid_moduli(10, 20, &cfg, 1.0).unwrap().is_none());
    }

    #[test]
    fn cache_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("moduli.json");
        let cfg = ModuliSearchConfig { trials: 20, ell_max: 4, ..Default::default() };
        let (a, ea) = choose_moduli_cached(60, 1.0, &cfg, Some(&path)).unwrap();
        let store = ModuliCache::load(&path).unwrap();
        assert_eq!(store.len(), 1);
        let (b, eb) = choose_moduli_cached(60, 1.0, &cfg, Some(&path)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
        let raw: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
        let entry = raw["entries"].as_object().unwrap().values().next().unwrap();
        assert!(entry["moduli"].is_array() && entry["kappa"].is_number() && entry["analytic_mse"].is_number());
    }
}
