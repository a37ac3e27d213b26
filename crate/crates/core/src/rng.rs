//! Seeded randomness.
//!
//! Every random object in the crate is drawn from `ChaCha8Rng` seeded through
//! `SeedableRng::seed_from_u64`. The stream is portable across platforms, but
//! fixtures meant for other implementations should be exchanged as serialized
//! matrices rather than as seeds.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub use rand::SeedableRng;

pub type Prng = ChaCha8Rng;

pub fn seeded(seed: u64) -> Prng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re, im)
}

/// `rows x cols` matrix of i.i.d. standard complex normals.
pub fn ginibre<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(rows, cols, |_, _| complex_normal(rng))
}

/// Unit vector drawn from the unitarily invariant measure.
pub fn haar_vector<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DVector<Complex64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| complex_normal(rng));
        let norm = v.norm();
        if norm > 1e-12 {
            return v / Complex64::from(norm);
        }
    }
}

/// Haar-random unitary via QR of a Ginibre matrix with phase correction.
pub fn haar_unitary<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<Complex64> {
    let g = ginibre(rng, dim, dim);
    let qr = g.qr();
    let (mut q, r) = qr.unpack();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { Complex64::from(1.0) };
        for i in 0..dim {
            q[(i, j)] *= phase;
        }
    }
    q
}

/// Random density matrix `G G† / tr` with `rank` Ginibre columns.
pub fn random_density<R: Rng + ?Sized>(rng: &mut R, dim: usize, rank: usize) -> DMatrix<Complex64> {
    let g = ginibre(rng, dim, rank.max(1));
    let w = &g * g.adjoint();
    let tr = w.trace().re;
    w / Complex64::from(tr)
}

/// Random Hermitian matrix with standard-normal entries.
pub fn random_hermitian<R: Rng + ?Sized>(rng: &mut R, dim: usize) -> DMatrix<Complex64> {
    let g = ginibre(rng, dim, dim);
    (&g + g.adjoint()) * Complex64::from(0.5)
}

/// Kraus set of a random channel `C^d_in -> C^d_out` with `count` operators,
/// obtained by slicing a Haar isometry.
pub fn random_kraus<R: Rng + ?Sized>(
    rng: &mut R,
    d_in: usize,
    d_out: usize,
    count: usize,
) -> Vec<DMatrix<Complex64>> {
    let big = d_out * count;
    assert!(big >= d_in, "need d_out * count >= d_in for an isometry");
    let u = haar_unitary(rng, big.max(d_in));
    (0..count)
        .map(|k| DMatrix::from_fn(d_out, d_in, |i, j| u[(k * d_out + i, j)]))
        .collect()
}
