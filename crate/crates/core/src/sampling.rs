//! Seeded random sampling helpers used by probe checks, disc sampling and
//! the verification suites. All randomness in the crate flows through
//! explicitly seeded ChaCha streams so every run is reproducible.

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::numerics::{c64, hermitian_part, CMatrix};

/// SplitMix64 step, used to derive independent stream seeds from a master
/// seed and a counter.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Seed for a derived stream (trial, shell, grid point) of a master seed.
pub fn derived_seed(master: u64, index: u64) -> u64 {
    master ^ splitmix64(index.wrapping_add(0x51d5_b2a1))
}

/// Matrix with i.i.d. standard complex Gaussian entries.
pub fn complex_gaussian_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMatrix {
    let dist = StandardNormal;
    DMatrix::from_fn(rows, cols, |_, _| {
        let re: f64 = dist.sample(rng);
        let im: f64 = dist.sample(rng);
        c64(re / std::f64::consts::SQRT_2, im / std::f64::consts::SQRT_2)
    })
}

/// Random Hermitian matrix (G + G*)/2 scaled by `scale`.
pub fn random_hermitian<R: Rng>(rng: &mut R, n: usize, scale: f64) -> CMatrix {
    hermitian_part(&complex_gaussian_matrix(rng, n, n)).scale(scale)
}

/// Random Hermitian matrix with strictly positive imaginary shift removed:
/// a positive semi-definite G G* plus a small ridge, useful as Im-part stock.
pub fn random_psd<R: Rng>(rng: &mut R, n: usize, ridge: f64) -> CMatrix {
    let g = complex_gaussian_matrix(rng, n, n);
    &g * g.adjoint() + CMatrix::identity(n, n).scale(ridge)
}

/// Random unitary from the QR factorization of a complex Gaussian matrix.
pub fn random_unitary<R: Rng>(rng: &mut R, n: usize) -> CMatrix {
    let g = complex_gaussian_matrix(rng, n, n);
    let qr = g.qr();
    qr.q()
}

/// Random connected Hermitian graph: a random spanning tree plus extra
/// edges, uniform weights, random real diagonal.
pub fn random_connected_graph<R: Rng>(
    rng: &mut R,
    n: usize,
    real_weights: bool,
) -> crate::graph::WeightedGraph {
    let mut g = crate::graph::WeightedGraph::new(n);
    let draw = |rng: &mut R, real: bool| {
        let re = rng.random_range(-1.0..1.0);
        let im = if real { 0.0 } else { rng.random_range(-1.0..1.0) };
        c64(re, im)
    };
    for v in 1..n {
        let parent = rng.random_range(0..v);
        let w = draw(rng, real_weights);
        g.add_edge(parent, v, w).expect("valid edge");
    }
    for _ in 0..n {
        let x = rng.random_range(0..n);
        let y = rng.random_range(0..n);
        if x != y {
            let w = draw(rng, real_weights);
            let _ = g.add_edge(x, y, w);
        }
    }
    for v in 0..n {
        g.set_diagonal(v, rng.random_range(-1.0..1.0)).expect("valid vertex");
    }
    g
}
