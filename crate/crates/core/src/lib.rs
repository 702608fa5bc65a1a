pub mod attacks;
pub mod bench;
pub mod decoder;
pub mod domain;
pub mod error;
pub mod mechanisms;
pub mod moduli;
pub mod primes;
pub mod rng;
pub mod sparse;
