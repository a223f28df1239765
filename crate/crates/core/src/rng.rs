//! Seeded random streams and the discrete samplers the simulators draw from.
//!
//! Every replica owns one ChaCha8 stream selected by `(master_seed, replica)`;
//! ChaCha exposes 2^64 independent streams per seed, so replicas never
//! overlap and results do not depend on scheduling.
//!
//! Binomial variates use inversion (a single uniform draw, sequential search
//! from zero) for at most [`INVERSION_MAX_TRIALS`] trials and the BTPE
//! accept-reject sampler of `rand_distr` above that.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::model::Opinion;

pub type ReplicaRng = ChaCha8Rng;

/// Largest trial count handled by CDF inversion.
pub const INVERSION_MAX_TRIALS: u64 = 64;

/// Independent stream for one replica of an experiment.
pub fn replica_rng(master_seed: u64, replica: u64) -> ReplicaRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(replica);
    rng
}

/// Declared opinion of an agent with inherent opinion `phi` and truth
/// probability `p`. Consumes exactly one uniform draw.
#[inline]
pub fn sample_declared<R: Rng + ?Sized>(p: f64, phi: Opinion, rng: &mut R) -> Opinion {
    debug_assert!(phi <= 1);
    let u: f64 = rng.random();
    if u < p {
        phi
    } else {
        1 - phi
    }
}

/// Draws from Binomial(trials, p).
pub fn sample_binomial<R: Rng + ?Sized>(trials: u64, p: f64, rng: &mut R) -> u64 {
    debug_assert!((0.0..=1.0).contains(&p), "p = {p}");
    if trials == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return trials;
    }
    if trials <= INVERSION_MAX_TRIALS {
        if p > 0.5 {
            trials - binomial_inversion(trials, 1.0 - p, rng)
        } else {
            binomial_inversion(trials, p, rng)
        }
    } else {
        Binomial::new(trials, p)
            .expect("probability checked above")
            .sample(rng)
    }
}

// p <= 1/2 keeps q^m away from underflow for m <= 64.
fn binomial_inversion<R: Rng + ?Sized>(trials: u64, p: f64, rng: &mut R) -> u64 {
    let q = 1.0 - p;
    let ratio = p / q;
    let u: f64 = rng.random();
    let mut pmf = q.powi(trials as i32);
    let mut cdf = pmf;
    let mut k = 0;
    while u >= cdf && k < trials {
        pmf *= ratio * (trials - k) as f64 / (k + 1) as f64;
        k += 1;
        cdf += pmf;
    }
    k
}
