//! Permutations of identical tensor factors and the symmetric subspace.

use super::{c, Factorization, Matrix, Operator, Vector, DENSE_LIMIT};
use crate::error::{Error, Result};

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..n).collect();
    loop {
        out.push(current.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| current[i - 1] < current[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| current[j] > current[i - 1]).expect("pivot");
        current.swap(i - 1, j);
        current[i..].reverse();
    }
    out
}

pub fn factorial(n: usize) -> usize {
    (1..=n).product()
}

pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
    }
    acc
}

/// `dim H_sym(n)` for local dimension `d`: `binom(n + d - 1, n)`.
pub fn sym_dim(n: usize, d: usize) -> usize {
    if d == 0 {
        return 0;
    }
    binomial(n + d - 1, n) as usize
}

/// Site labels `B1..Bn` used by bare permutation operators.
pub fn site_shape(n: usize, d: usize) -> Factorization {
    Factorization::new((1..=n).map(|k| (format!("B{k}"), d))).expect("distinct labels")
}

/// Unitary `Π_σ` on `(C^d)^{⊗n}` placing the vector in slot `k` into slot `perm[k]`,
/// so that `Π_σ Π_τ = Π_{σ∘τ}`.
pub fn permutation_operator(perm: &[usize], d: usize) -> Result<Operator> {
    let n = perm.len();
    let dim = checked_pow(d, n)?;
    let shape = site_shape(n, d);
    let mut m = Matrix::zeros(dim, dim);
    let mut digits = vec![0usize; n];
    let mut out_digits = vec![0usize; n];
    for idx in 0..dim {
        let mut rem = idx;
        for k in (0..n).rev() {
            digits[k] = rem % d;
            rem /= d;
        }
        for k in 0..n {
            out_digits[perm[k]] = digits[k];
        }
        let target = out_digits.iter().fold(0, |acc, &x| acc * d + x);
        m[(target, idx)] = c(1.0);
    }
    Operator::new(m, shape)
}

fn checked_pow(d: usize, n: usize) -> Result<usize> {
    let mut acc: usize = 1;
    for _ in 0..n {
        acc = acc.checked_mul(d).filter(|&a| a <= DENSE_LIMIT).ok_or(Error::DimensionOverflow {
            dim: d.saturating_pow(n as u32),
            limit: DENSE_LIMIT,
        })?;
    }
    Ok(acc)
}

/// Occupation-number vectors `m` with `sum m = n` over `d` modes, in
/// lexicographically decreasing order of `m` (so `[n,0,..]` comes first).
pub fn occupations(n: usize, d: usize) -> Vec<Vec<usize>> {
    fn rec(left: usize, modes: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if modes == 1 {
            prefix.push(left);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=left).rev() {
            prefix.push(k);
            rec(left - k, modes - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    if d == 0 {
        return out;
    }
    rec(n, d, &mut Vec::with_capacity(d), &mut out);
    out
}

fn ln_factorial(n: usize) -> f64 {
    (1..=n).map(|k| (k as f64).ln()).sum()
}

/// `sqrt(n! / prod m_i!)`.
pub fn multinomial_sqrt(m: &[usize]) -> f64 {
    let n: usize = m.iter().sum();
    let ln = ln_factorial(n) - m.iter().map(|&k| ln_factorial(k)).sum::<f64>();
    (0.5 * ln).exp()
}

/// Orthonormal Dicke basis of `H_sym(n)` as columns of a `d^n x dim_sym` matrix.
pub fn dicke_basis(n: usize, d: usize) -> Result<Matrix> {
    let dim = checked_pow(d, n)?;
    let occ = occupations(n, d);
    let index: std::collections::HashMap<Vec<usize>, usize> =
        occ.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
    let mut basis = Matrix::zeros(dim, occ.len());
    let mut counts = vec![0usize; d];
    for idx in 0..dim {
        counts.iter_mut().for_each(|x| *x = 0);
        let mut rem = idx;
        for _ in 0..n {
            counts[rem % d] += 1;
            rem /= d;
        }
        let col = index[&counts];
        basis[(idx, col)] = c(1.0 / multinomial_sqrt(&counts));
    }
    Ok(basis)
}

/// Coordinates of `φ^{⊗n}` in the Dicke basis, ordered as [`occupations`].
pub fn product_dicke_coords(phi: &Vector, n: usize) -> Vector {
    let d = phi.len();
    let occ = occupations(n, d);
    Vector::from_iterator(
        occ.len(),
        occ.iter().map(|m| {
            let mut z = c(multinomial_sqrt(m));
            for (k, &mk) in m.iter().enumerate() {
                z *= phi[k].powu(mk as u32);
            }
            z
        }),
    )
}

/// Projector onto `H_sym(n)` of `(C^d)^{⊗n}`, built from the Dicke basis.
pub fn symmetric_projector(n: usize, d: usize) -> Result<Operator> {
    let v = dicke_basis(n, d)?;
    Operator::new(&v * v.adjoint(), site_shape(n, d))
}
