//! Experiment sweeps over mechanisms, budgets and trials.

use std::path::PathBuf;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::data::{draw_dataset, Distribution};
use crate::attacks::{attack_guess, dra_analytic};
use crate::decoder::{baseline_bits, comm_cost_bits, decode, default_lambda, BlockCounts};
use crate::domain::{Histogram, ModuliSet};
use crate::error::{MssError, Result};
use crate::mechanisms::{
    grr_estimate, oue_estimate, ss_estimate, Grr, MechTag, Mechanism, Mss, Oue, Report, SubsetSampler,
    SubsetSelection,
};
use crate::moduli::{choose_moduli_cached, planning_kappa, ModuliSearchConfig};
use crate::rng::{label, stream, substream};

/// Ridge parameter used by the MSS decoder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LambdaPolicy {
    /// `1/ε²`
    Auto,
    Fixed(f64),
}

impl LambdaPolicy {
    pub fn resolve(&self, eps: f64) -> f64 {
        match *self {
            LambdaPolicy::Auto => default_lambda(eps),
            LambdaPolicy::Fixed(l) => l,
        }
    }
}

impl std::str::FromStr for LambdaPolicy {
    type Err = MssError;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim().eq_ignore_ascii_case("auto") {
            return Ok(LambdaPolicy::Auto);
        }
        let v: f64 = s.trim().parse().map_err(|_| MssError::invalid(format!("bad lambda '{s}'")))?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(MssError::invalid(format!("lambda {v} must be finite and >= 0")));
        }
        Ok(LambdaPolicy::Fixed(v))
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub mechs: Vec<MechTag>,
    pub k: usize,
    pub n: usize,
    pub eps_grid: Vec<f64>,
    pub dist: Distribution,
    pub trials: usize,
    pub seed: u64,
    pub lambda: LambdaPolicy,
    pub search: ModuliSearchConfig,
    pub moduli_cache: Option<PathBuf>,
    /// Fixed MSS moduli instead of a search.
    pub moduli: Option<Vec<usize>>,
    /// Attack every report and record the empirical DRA.
    pub attack: bool,
    /// Record decode wall time (makes output nondeterministic).
    pub timings: bool,
}

impl ExperimentConfig {
    pub fn new(mechs: Vec<MechTag>, k: usize, n: usize, eps_grid: Vec<f64>, dist: Distribution) -> Self {
        ExperimentConfig {
            mechs,
            k,
            n,
            eps_grid,
            dist,
            trials: 1,
            seed: 0,
            lambda: LambdaPolicy::Auto,
            search: ModuliSearchConfig::default(),
            moduli_cache: None,
            moduli: None,
            attack: false,
            timings: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.mechs.is_empty() {
            return Err(MssError::invalid("no mechanisms selected"));
        }
        if self.k < 2 {
            return Err(MssError::invalid("k must be >= 2"));
        }
        if self.n == 0 {
            return Err(MssError::invalid("n must be >= 1"));
        }
        if self.trials == 0 {
            return Err(MssError::invalid("trials must be >= 1"));
        }
        if self.eps_grid.is_empty() {
            return Err(MssError::invalid("empty eps grid"));
        }
        if let Some(e) = self.eps_grid.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(MssError::invalid(format!("eps {e} must be finite and > 0")));
        }
        if let LambdaPolicy::Fixed(l) = self.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(MssError::invalid(format!("lambda {l} must be finite and >= 0")));
            }
        }
        self.search.validate()?;
        self.dist.histogram(self.k)?;
        if let Some(m) = &self.moduli {
            ModuliSet::new(m.clone(), self.k, self.eps_grid[0])?;
        }
        Ok(())
    }
}

/// One row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub trial: usize,
    pub mech: MechTag,
    pub k: usize,
    pub eps: f64,
    pub n: usize,
    pub dist: String,
    pub mse: f64,
    pub bits_per_user: f64,
    pub decode_ms: Option<f64>,
    pub dra_empirical: Option<f64>,
    pub dra_analytic: Option<f64>,
    pub kappa: Option<f64>,
    pub solver_iters: Option<usize>,
}

struct Setup {
    mech: Mechanism,
    bits: f64,
    kappa: Option<f64>,
    dra: Option<f64>,
}

fn setup(tag: MechTag, cfg: &ExperimentConfig, eps: f64) -> Result<Setup> {
    let k = cfg.k;
    let (mech, kappa) = match tag {
        MechTag::Grr => (Mechanism::Grr(Grr::new(k, eps)?), None),
        MechTag::Ss => (Mechanism::Ss(SubsetSelection::new(k, eps)?), None),
        MechTag::Oue => (Mechanism::Oue(Oue::new(k, eps)?), None),
        MechTag::Mss => {
            let (set, kappa) = match &cfg.moduli {
                Some(m) => {
                    let set = ModuliSet::new(m.clone(), k, eps)?;
                    let kappa = planning_kappa(&set, f64::INFINITY);
                    (set, kappa)
                }
                None => {
                    let (set, entry) = choose_moduli_cached(k, eps, &cfg.search, cfg.moduli_cache.as_deref())?;
                    (set, entry.kappa)
                }
            };
            (Mechanism::Mss(Mss::new(set)), Some(kappa))
        }
    };
    let bits = match &mech {
        Mechanism::Mss(m) => comm_cost_bits(&m.moduli),
        _ => baseline_bits(tag, k, eps)?,
    };
    let dra = if cfg.attack { dra_analytic(&mech) } else { None };
    Ok(Setup { mech, bits, kappa, dra })
}

enum Counts {
    Flat(Vec<u64>),
    Blocks(BlockCounts),
}

struct TrialOutcome {
    mse: f64,
    decode_ms: f64,
    hits: u64,
    iters: Option<usize>,
}

fn run_trial(s: &Setup, f: &Histogram, cfg: &ExperimentConfig, eps: f64, trial: usize) -> Result<TrialOutcome> {
    let mut data_rng = stream(cfg.seed, &[label("data"), trial as u64]);
    let data = draw_dataset(f, cfg.n, &mut data_rng)?;
    let tag = s.mech.tag();
    let mut rng = substream(cfg.seed, &[label(tag.as_str()), eps.to_bits()], trial as u64);
    let mut sampler = SubsetSampler::new();
    let mut counts = match &s.mech {
        Mechanism::Mss(m) => Counts::Blocks(BlockCounts::new(&m.moduli)),
        _ => Counts::Flat(vec![0; cfg.k]),
    };
    let mut hits = 0u64;
    for &x in data.values() {
        let report = s.mech.perturb(x, &mut rng, &mut sampler);
        if cfg.attack {
            hits += u64::from(attack_guess(&s.mech, &report, &mut rng) == x);
        }
        match (&mut counts, &report) {
            (Counts::Flat(c), Report::Grr(y)) => c[*y] += 1,
            (Counts::Flat(c), Report::Ss(z) | Report::Oue(z)) => z.iter().for_each(|&v| c[v as usize] += 1),
            (Counts::Blocks(b), Report::Mss(r)) => b.add_unchecked(r.j, &r.z),
            _ => unreachable!("report kind matches mechanism"),
        }
    }
    let n = cfg.n as u64;
    let start = Instant::now();
    let (est, iters) = match (&s.mech, &counts) {
        (Mechanism::Grr(_), Counts::Flat(c)) => (grr_estimate(c, eps, n)?, None),
        (Mechanism::Ss(_), Counts::Flat(c)) => (ss_estimate(c, eps, n)?, None),
        (Mechanism::Oue(_), Counts::Flat(c)) => (oue_estimate(c, eps, n)?, None),
        (Mechanism::Mss(m), Counts::Blocks(b)) => {
            let e = decode(b, &m.moduli, cfg.lambda.resolve(eps))?;
            (e.histogram, Some(e.solver.iterations))
        }
        _ => unreachable!("counts kind matches mechanism"),
    };
    let decode_ms = start.elapsed().as_secs_f64() * 1e3;
    Ok(TrialOutcome { mse: est.mse(f), decode_ms, hits, iters })
}

/// Runs every `(mechanism, ε, trial)` cell. Records come back ordered by
/// mechanism (as listed), then ε, then trial, regardless of scheduling.
///
/// Trial `t` uses the same dataset for every mechanism and budget.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Vec<ExperimentRecord>> {
    cfg.validate()?;
    let f = cfg.dist.histogram(cfg.k)?;
    let dist = cfg.dist.to_string();
    let mut records = Vec::with_capacity(cfg.mechs.len() * cfg.eps_grid.len() * cfg.trials);
    for &tag in &cfg.mechs {
        for &eps in &cfg.eps_grid {
            let s = setup(tag, cfg, eps)?;
            let outcomes: Vec<Result<TrialOutcome>> =
                (0..cfg.trials).into_par_iter().map(|t| run_trial(&s, &f, cfg, eps, t)).collect();
            for (trial, o) in outcomes.into_iter().enumerate() {
                let o = o?;
                records.push(ExperimentRecord {
                    trial,
                    mech: tag,
                    k: cfg.k,
                    eps,
                    n: cfg.n,
                    dist: dist.clone(),
                    mse: o.mse,
                    bits_per_user: s.bits,
                    decode_ms: cfg.timings.then_some(o.decode_ms),
                    dra_empirical: cfg.attack.then(|| o.hits as f64 / cfg.n as f64),
                    dra_analytic: s.dra,
                    kappa: s.kappa,
                    solver_iters: o.iters,
                });
            }
        }
    }
    Ok(records)
}

/// Parses `"lo:hi:step"` or a comma-separated list.
pub fn parse_eps_grid(s: &str) -> Result<Vec<f64>> {
    let bad = || MssError::invalid(format!("bad eps grid '{s}'"));
    let parts: Vec<&str> = s.split(':').map(str::trim).collect();
    let grid: Vec<f64> = if parts.len() == 3 {
        let v: Vec<f64> = parts.iter().map(|p| p.parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
        let (lo, hi, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || !(hi >= lo) {
            return Err(bad());
        }
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| lo + i as f64 * step).map(|e| (e * 1e12).round() / 1e12).collect()
    } else if parts.len() == 1 {
        s.split(',').map(|p| p.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?
    } else {
        return Err(bad());
    };
    if grid.is_empty() || grid.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(MssError::invalid(format!("eps grid '{s}' must be nonempty and positive")));
    }
    Ok(grid)
}
