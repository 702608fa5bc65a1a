//! Prime enumeration for the moduli search.
//!
//! Bands up to [`SIEVE_LIMIT`] are enumerated with a segmented sieve of
//! Eratosthenes; above it, candidates are tested with deterministic
//! Miller–Rabin (exact for all `u64`).

/// Upper end of the range handled by sieving.
pub const SIEVE_LIMIT: u64 = 100_000_000;

const SEGMENT: u64 = 1 << 16;

fn mul_mod(a: u64, b: u64, m: u64) -> u64 {
    ((a as u128 * b as u128) % m as u128) as u64
}

fn pow_mod(mut base: u64, mut exp: u64, m: u64) -> u64 {
    let mut acc = 1 % m;
    base %= m;
    while exp > 0 {
        if exp & 1 == 1 {
            acc = mul_mod(acc, base, m);
        }
        base = mul_mod(base, base, m);
        exp >>= 1;
    }
    acc
}

/// Deterministic Miller–Rabin; the first twelve prime bases cover `u64`.
pub fn is_prime(n: u64) -> bool {
    const BASES: [u64; 12] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37];
    if n < 2 {
        return false;
    }
    for &p in &BASES {
        if n % p == 0 {
            return n == p;
        }
    }
    let s = (n - 1).trailing_zeros();
    let d = (n - 1) >> s;
    'witness: for &a in &BASES {
        let mut x = pow_mod(a, d, n);
        if x == 1 || x == n - 1 {
            continue;
        }
        for _ in 1..s {
            x = mul_mod(x, x, n);
            if x == n - 1 {
                continue 'witness;
            }
        }
        return false;
    }
    true
}

/// Smallest prime strictly greater than `n`.
pub fn next_prime(n: u64) -> u64 {
    let mut c = n + 1;
    if c <= 2 {
        return 2;
    }
    if c % 2 == 0 {
        c += 1;
    }
    while !is_prime(c) {
        c += 2;
    }
    c
}

/// Smallest prime `>= n`.
pub fn prime_at_least(n: u64) -> u64 {
    if n <= 2 {
        2
    } else {
        next_prime(n - 1)
    }
}

fn small_primes_upto(limit: u64) -> Vec<u64> {
    let limit = limit as usize;
    let mut composite = vec![false; limit + 1];
    let mut out = Vec::new();
    for i in 2..=limit {
        if !composite[i] {
            out.push(i as u64);
            let mut j = i * i;
            while j <= limit {
                composite[j] = true;
                j += i;
            }
        }
    }
    out
}

fn sieve_range(lo: u64, hi: u64) -> Vec<u64> {
    let base = small_primes_upto((hi as f64).sqrt() as u64 + 1);
    let mut out = Vec::new();
    let mut seg_lo = lo.max(2);
    let mut composite = vec![false; SEGMENT as usize];
    while seg_lo <= hi {
        let seg_hi = (seg_lo + SEGMENT - 1).min(hi);
        let len = (seg_hi - seg_lo + 1) as usize;
        composite[..len].iter_mut().for_each(|c| *c = false);
        for &p in &base {
            if p * p > seg_hi {
                break;
            }
            let mut start = seg_lo.div_ceil(p) * p;
            if start < p * p {
                start = p * p;
            }
            let mut j = start;
            while j <= seg_hi {
                composite[(j - seg_lo) as usize] = true;
                j += p;
            }
        }
        out.extend(
            (0..len)
                .filter(|&i| !composite[i])
                .map(|i| seg_lo + i as u64),
        );
        seg_lo = seg_hi + 1;
    }
    out
}

/// All primes `p` with `max(2, ⌈lo⌉) ≤ p ≤ ⌊hi⌋`, ascending.
pub fn primes_in_band(lo: f64, hi: f64) -> Vec<u64> {
    if !(hi >= 2.0) {
        return Vec::new();
    }
    let lo = lo.ceil().max(2.0) as u64;
    let hi = hi.floor() as u64;
    if lo > hi {
        return Vec::new();
    }
    if hi <= SIEVE_LIMIT {
        return sieve_range(lo, hi);
    }
    let mut out = if lo <= SIEVE_LIMIT { sieve_range(lo, SIEVE_LIMIT) } else { Vec::new() };
    let mut c = lo.max(SIEVE_LIMIT + 1) | 1;
    while c <= hi {
        if is_prime(c) {
            out.push(c);
        }
        c += 2;
    }
    out
}
