use rand::Rng;

/// Uniform sampling without replacement from `[m] \ {exclude}` by partial
/// Fisher–Yates on a reusable identity buffer. Swaps are undone after each
/// draw so a call costs `O(count)` regardless of `m`.
#[derive(Debug, Default, Clone)]
pub struct SubsetSampler {
    perm: Vec<u32>,
    swaps: Vec<u32>,
}

impl SubsetSampler {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends `count` distinct values from `[m] \ {exclude}` to `out`.
    pub fn sample_excluding<R: Rng + ?Sized>(
        &mut self,
        m: usize,
        exclude: usize,
        count: usize,
        rng: &mut R,
        out: &mut Vec<u32>,
    ) {
        let pool = m - 1;
        debug_assert!(count <= pool);
        if self.perm.len() < pool {
            let start = self.perm.len() as u32;
            self.perm.extend(start..pool as u32);
        }
        self.swaps.clear();
        for i in 0..count {
            let j = rng.gen_range(i..pool);
            self.perm.swap(i, j);
            self.swaps.push(j as u32);
            let v = self.perm[i] as usize;
            out.push(if v < exclude { v } else { v + 1 } as u32);
        }
        for (i, &j) in self.swaps.iter().enumerate().rev() {
            self.perm.swap(i, j as usize);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn buffer_is_restored_and_draws_are_valid() {
        let mut s = SubsetSampler::new();
        let mut rng = stream(1, &[]);
        for _ in 0..200 {
            let mut out = Vec::new();
            s.sample_excluding(10, 3, 6, &mut rng, &mut out);
            assert_eq!(out.len(), 6);
            assert!(!out.contains(&3));
            assert!(out.iter().all(|&v| v < 10));
            let mut d = out.clone();
            d.sort_unstable();
            d.dedup();
            assert_eq!(d.len(), 6);
            assert!(s.perm.iter().enumerate().all(|(i, &v)| i as u32 == v));
        }
    }

    #[test]
    fn every_candidate_equally_likely() {
        let mut s = SubsetSampler::new();
        let mut rng = stream(2, &[]);
        let trials = 60_000;
        let mut hits = [0u32; 7];
        for _ in 0..trials {
            let mut out = Vec::new();
            s.sample_excluding(7, 0, 2, &mut rng, &mut out);
            for v in out {
                hits[v as usize] += 1;
            }
        }
        // each of the 6 candidates: P = 2/6
        let p = 2.0 / 6.0;
        let sd = (trials as f64 * p * (1.0 - p)).sqrt();
        assert_eq!(hits[0], 0);
        for &h in &hits[1..] {
            assert!((h as f64 - trials as f64 * p).abs() < 4.0 * sd);
        }
    }
}
