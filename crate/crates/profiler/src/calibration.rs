//! Small kernels with known pipeline behaviour, used to sanity-check counter readings.

use std::hint::black_box;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

/// Single random cycle over `len` slots, so every load depends on the previous one.
pub fn chase_ring(len: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..len).collect();
    order.shuffle(&mut SplitMix64::seed_from_u64(seed));
    let mut next = vec![0usize; len];
    for w in order.windows(2) {
        next[w[0]] = w[1];
    }
    if let (Some(&last), Some(&first)) = (order.last(), order.first()) {
        next[last] = first;
    }
    next
}

/// Dependent loads around `ring`. Latency bound by whichever cache level holds the ring.
#[inline(never)]
pub fn pointer_chase(ring: &[usize], steps: usize) -> usize {
    let mut i = 0;
    for _ in 0..steps {
        i = ring[i];
    }
    black_box(i)
}

/// Four independent integer chains; should retire close to the issue width.
#[inline(never)]
pub fn independent_adds(iterations: u64) -> u64 {
    let (mut a, mut b, mut c, mut d) = (1u64, 2u64, 3u64, 4u64);
    for i in 0..iterations {
        a = a.wrapping_add(i);
        b = b.wrapping_add(i ^ 1);
        c = c.wrapping_add(i ^ 2);
        d = d.wrapping_add(i ^ 3);
        black_box(&a);
    }
    black_box(a ^ b ^ c ^ d)
}

/// One long floating-point dependency chain; bound by execution latency, not memory.
#[inline(never)]
pub fn fp_chain(iterations: u64) -> f64 {
    let mut x = black_box(1.000_000_1f64);
    let m = black_box(0.999_999_9f64);
    for _ in 0..iterations {
        x = x * m + 1e-9;
        x = x.sqrt() * x.sqrt();
    }
    black_box(x)
}
