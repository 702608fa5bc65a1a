//! Synthetic input distributions and dataset sampling.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, Histogram};
use crate::error::{MssError, Result};

/// `f_v ∝ (v+1)^{−s}`.
pub fn gen_zipf(k: usize, s: f64) -> Result<Histogram> {
    if k == 0 {
        return Err(MssError::invalid("domain size must be >= 1"));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(MssError::invalid(format!("zipf exponent {s} must be > 0")));
    }
    let w: Vec<f64> = (1..=k).map(|v| (v as f64).powf(-s)).collect();
    // summing smallest-first keeps the normalization tight for large k
    let total: f64 = w.iter().rev().sum();
    Histogram::distribution(w.into_iter().map(|x| x / total).collect())
}

/// Point mass at 0.
pub fn gen_spike(k: usize) -> Result<Histogram> {
    if k == 0 {
        return Err(MssError::invalid("domain size must be >= 1"));
    }
    let mut f = vec![0.0; k];
    f[0] = 1.0;
    Histogram::distribution(f)
}

pub fn gen_uniform(k: usize) -> Result<Histogram> {
    if k == 0 {
        return Err(MssError::invalid("domain size must be >= 1"));
    }
    Histogram::distribution(vec![1.0 / k as f64; k])
}

/// `n` i.i.d. draws from `f` by inverse CDF.
pub fn draw_dataset<R: Rng + ?Sized>(f: &Histogram, n: usize, rng: &mut R) -> Result<Dataset> {
    if n == 0 {
        return Err(MssError::invalid("n must be >= 1"));
    }
    let k = f.k();
    let mut cdf = Vec::with_capacity(k);
    let mut acc = 0.0;
    for &p in f.as_slice() {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    // last index with positive mass, so round-off never selects a zero-mass tail
    let last = f.as_slice().iter().rposition(|&p| p > 0.0).unwrap_or(k - 1);
    let values = (0..n)
        .map(|_| {
            let u = rng.gen::<f64>() * total;
            cdf.partition_point(|&c| c <= u).min(last)
        })
        .collect();
    Dataset::new(k, values)
}

/// A named input distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Zipf(f64),
    Spike,
    Uniform,
}

impl Distribution {
    pub fn histogram(&self, k: usize) -> Result<Histogram> {
        match *self {
            Distribution::Zipf(s) => gen_zipf(k, s),
            Distribution::Spike => gen_spike(k),
            Distribution::Uniform => gen_uniform(k),
        }
    }
}

impl fmt::Display for Distribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Distribution::Zipf(s) => write!(f, "zipf:{s}"),
            Distribution::Spike => f.write_str("spike"),
            Distribution::Uniform => f.write_str("uniform"),
        }
    }
}

impl FromStr for Distribution {
    type Err = MssError;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim().to_ascii_lowercase();
        match t.as_str() {
            "spike" => Ok(Distribution::Spike),
            "uniform" => Ok(Distribution::Uniform),
            _ => {
                let exp = t
                    .strip_prefix("zipf:")
                    .ok_or_else(|| MssError::invalid(format!("unknown distribution '{s}'")))?;
                let v: f64 = exp.parse().map_err(|_| MssError::invalid(format!("bad zipf exponent '{exp}'")))?;
                if !(v > 0.0 && v.is_finite()) {
                    return Err(MssError::invalid(format!("zipf exponent {v} must be > 0")));
                }
                Ok(Distribution::Zipf(v))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn zipf_examples() {
        let f = gen_zipf(2, 1.0).unwrap();
        assert!((f.as_slice()[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.as_slice()[1] - 1.0 / 3.0).abs() < 1e-15);
        let f = gen_zipf(3, 3.0).unwrap();
        for (a, b) in f.as_slice().iter().zip([216.0, 27.0, 8.0]) {
            assert!((a - b / 251.0).abs() < 1e-15);
        }
        assert!((gen_zipf(22000, 3.0).unwrap().sum() - 1.0).abs() < 1e-12);
        assert!((gen_zipf(22000, 0.5).unwrap().sum() - 1.0).abs() < 1e-12);
        assert!(gen_zipf(5, 0.0).is_err());
    }

    #[test]
    fn spike_and_uniform() {
        assert_eq!(gen_spike(1).unwrap().as_slice(), &[1.0]);
        assert_eq!(gen_spike(5).unwrap().as_slice(), &[1.0, 0.0, 0.0, 0.0, 0.0]);
        assert!((gen_uniform(7).unwrap().sum() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parse_round_trip() {
        for d in [Distribution::Zipf(3.0), Distribution::Zipf(1.5), Distribution::Spike, Distribution::Uniform] {
            assert_eq!(d.to_string().parse::<Distribution>().unwrap(), d);
        }
        assert!("zipf:-1".parse::<Distribution>().is_err());
        assert!("normal".parse::<Distribution>().is_err());
    }

    #[test]
    fn spike_draws_zero() {
        let d = draw_dataset(&gen_spike(9).unwrap(), 1000, &mut stream(1, &[])).unwrap();
        assert!(d.values().iter().all(|&v| v == 0));
    }

    #[test]
    fn uniform_counts_are_multinomial() {
        let n = 1_000_000;
        let d = draw_dataset(&gen_uniform(4).unwrap(), n, &mut stream(2, &[])).unwrap();
        let mut c = [0usize; 4];
        for &v in d.values() {
            c[v] += 1;
        }
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        for x in c {
            assert!((x as f64 - n as f64 / 4.0).abs() < 3.0 * sd, "{c:?}");
        }
    }

    #[test]
    fn draws_are_deterministic_and_skip_zero_mass() {
        let f = Histogram::distribution(vec![0.5, 0.5, 0.0]).unwrap();
        let a = draw_dataset(&f, 500, &mut stream(3, &[])).unwrap();
        let b = draw_dataset(&f, 500, &mut stream(3, &[])).unwrap();
        assert_eq!(a, b);
        assert!(a.values().iter().all(|&v| v < 2));
    }
}
